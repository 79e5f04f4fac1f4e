"""All matrices needed on one refinement level, built once and shared read-only."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .fem1d import FeSpace, assemble_mass, assemble_stiffness, build_mesh, make_fespace


@dataclass(frozen=True)
class Discretization:
    fe: FeSpace
    kappa: float
    M: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    basis: spectral.DiscreteEigenbasis = field(repr=False)
    R: np.ndarray | None = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.fe.h

    @property
    def level(self) -> int:
        return self.fe.mesh.level


def build_level(n0: int, level: int, p: int, kappa: float = 0.5, align: bool = True) -> Discretization:
    """Mesh, matrices and eigenbasis for one level; ``align`` also fixes signs and builds ``R``."""
    fe = make_fespace(build_mesh(n0, level), p)
    M = assemble_mass(fe)
    L = assemble_stiffness(fe, kappa)
    basis = spectral.solve_discrete_eigs(L, M, fe)
    R = None
    if align:
        basis = spectral.align_signs(basis)
        R = spectral.assemble_R(M, basis)
    return Discretization(fe=fe, kappa=kappa, M=M, L=L, basis=basis, R=R)
