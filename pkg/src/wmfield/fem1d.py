"""Lagrange finite elements of degree 1 or 2 on the unit interval.

Homogeneous Dirichlet conditions are imposed by eliminating the two boundary
nodes, so every matrix and coefficient vector here is indexed by interior
degrees of freedom only.  Dofs are numbered by increasing coordinate, which
makes the mass and stiffness matrices banded with half-bandwidth ``p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError

__all__ = [
    "Mesh1D",
    "FeSpace",
    "build_mesh",
    "make_fespace",
    "assemble_mass",
    "assemble_stiffness",
    "evaluation_matrix",
    "eval_fe",
    "sine_inner_products",
    "to_banded",
]

# Monomial coefficients (1, s, s^2) of the local shape functions on [-1, 1].
_SHAPE = {
    1: np.array([[0.5, -0.5, 0.0],
                 [0.5, 0.5, 0.0]]),
    2: np.array([[0.0, -0.5, 0.5],
                 [1.0, 0.0, -1.0],
                 [0.0, 0.5, 0.5]]),
}


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of [0, 1] obtained by refining an ``n0``-node mesh ``level`` times."""

    n0: int
    level: int
    n_elements: int
    h: float
    nodes: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class FeSpace:
    """Continuous piecewise polynomials of degree ``degree`` vanishing at 0 and 1.

    ``cell_dofs[e, a]`` is the global dof of local shape function ``a`` on
    element ``e``, or -1 for an eliminated boundary node.
    """

    mesh: Mesh1D
    degree: int
    n_dofs: int
    cell_dofs: np.ndarray = field(repr=False)
    dof_coords: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def bandwidth(self) -> int:
        return self.degree


def build_mesh(n0: int, level: int) -> Mesh1D:
    if int(n0) != n0 or n0 < 2:
        raise ConfigError(f"n0 must be an integer >= 2, got {n0!r}")
    if int(level) != level or level < 0:
        raise ConfigError(f"level must be a nonnegative integer, got {level!r}")
    n0, level = int(n0), int(level)
    n = (n0 - 1) * 2**level
    nodes = np.arange(n + 1, dtype=float) / n
    return Mesh1D(n0=n0, level=level, n_elements=n, h=1.0 / n, nodes=nodes)


def make_fespace(mesh: Mesh1D, p: int) -> FeSpace:
    if p not in (1, 2):
        raise ConfigError(f"unsupported polynomial degree {p!r}; expected 1 or 2")
    n = mesh.n_elements
    # global point index of each local node, boundary points are 0 and n*p
    points = p * np.arange(n)[:, None] + np.arange(p + 1)[None, :]
    cell_dofs = points - 1
    cell_dofs[points == n * p] = -1
    n_dofs = n * p - 1
    dof_coords = np.arange(1, n * p, dtype=float) / (n * p)
    return FeSpace(mesh=mesh, degree=p, n_dofs=n_dofs,
                   cell_dofs=cell_dofs, dof_coords=dof_coords)


def _local_matrices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference mass and derivative matrices on [-1, 1] by Gauss-Legendre."""
    nq = math.ceil((2 * p + 1) / 2) + 1
    s, w = np.polynomial.legendre.leggauss(nq)
    c = _SHAPE[p]
    vals = c @ np.vstack([np.ones_like(s), s, s**2])
    ders = c[:, 1:] @ np.vstack([np.ones_like(s), 2 * s])
    mass = (vals * w) @ vals.T
    grad = (ders * w) @ ders.T
    return mass, grad


def _assemble(fe: FeSpace, local: np.ndarray) -> np.ndarray:
    A = np.zeros((fe.n_dofs, fe.n_dofs))
    for dofs in fe.cell_dofs:
        keep = dofs >= 0
        idx = dofs[keep]
        A[np.ix_(idx, idx)] += local[np.ix_(keep, keep)]
    return A


def assemble_mass(fe: FeSpace) -> np.ndarray:
    """Gramian of the nodal basis, ``M[i, j] = (phi_i, phi_j)``."""
    mass, _ = _local_matrices(fe.degree)
    return _assemble(fe, 0.5 * fe.h * mass)


def assemble_stiffness(fe: FeSpace, kappa: float = 0.0) -> np.ndarray:
    """Galerkin matrix of ``-u'' + kappa**2 u``; ``kappa=0`` gives the pure Laplacian."""
    mass, grad = _local_matrices(fe.degree)
    h = fe.h
    return _assemble(fe, (2.0 / h) * grad + kappa**2 * 0.5 * h * mass)


def to_banded(A: np.ndarray, u: int) -> np.ndarray:
    """Upper banded storage of a symmetric matrix, as used by ``scipy.linalg.cholesky_banded``."""
    n = A.shape[0]
    ab = np.zeros((u + 1, n))
    for d in range(u + 1):
        ab[u - d, d:] = np.diagonal(A, d)
    return ab


def _locate(fe: FeSpace, x: np.ndarray) -> np.ndarray:
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(~np.isfinite(x)):
        raise ConfigError("evaluation points must lie in [0, 1]")
    # a node belongs to the element on its left; x = 0 to the first element
    e = np.searchsorted(fe.mesh.nodes, x, side="left") - 1
    return np.clip(e, 0, fe.mesh.n_elements - 1)


def evaluation_matrix(fe: FeSpace, x, derivative_order: int = 0) -> sp.csr_matrix:
    """Sparse matrix mapping coefficient vectors to values (or derivatives) at ``x``."""
    if derivative_order not in (0, 1):
        raise ConfigError("derivative_order must be 0 or 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    e = _locate(fe, x)
    h = fe.h
    s = 2.0 * (x - fe.mesh.nodes[e]) / h - 1.0
    c = _SHAPE[fe.degree]
    if derivative_order == 0:
        vals = c[:, 0] + np.outer(s, c[:, 1]) + np.outer(s**2, c[:, 2])
    else:
        vals = (2.0 / h) * (c[:, 1] + np.outer(2 * s, c[:, 2]))
    dofs = fe.cell_dofs[e]
    keep = dofs >= 0
    rows = np.broadcast_to(np.arange(x.size)[:, None], dofs.shape)
    return sp.csr_matrix((vals[keep], (rows[keep], dofs[keep])),
                         shape=(x.size, fe.n_dofs))


def eval_fe(fe: FeSpace, coeffs, x, derivative_order: int = 0):
    """Value of ``sum_j coeffs[j] * phi_j`` (or its derivative) at ``x``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != fe.n_dofs:
        raise ConfigError(f"expected {fe.n_dofs} coefficients, got {coeffs.shape[0]}")
    out = evaluation_matrix(fe, x, derivative_order) @ coeffs
    return out[0] if np.ndim(x) == 0 else out


def _cos_moments(a: np.ndarray, n: int) -> np.ndarray:
    """int_{-1}^{1} s**n cos(a s) ds for even n."""
    out = np.empty_like(a)
    small = np.abs(a) < 1.0
    a_s = a[small]
    acc = np.zeros_like(a_s)
    term = np.ones_like(a_s)
    for k in range(12):
        acc += term * 2.0 / (n + 2 * k + 1)
        term = -term * a_s**2 / ((2 * k + 1) * (2 * k + 2))
    out[small] = acc
    a_l = a[~small]
    sa, ca = np.sin(a_l), np.cos(a_l)
    if n == 0:
        out[~small] = 2 * sa / a_l
    elif n == 2:
        out[~small] = 2 * ((a_l**2 - 2) * sa + 2 * a_l * ca) / a_l**3
    else:
        raise ValueError(n)
    return out


def _sin_moments(a: np.ndarray, n: int) -> np.ndarray:
    """int_{-1}^{1} s**n sin(a s) ds for odd n."""
    if n != 1:
        raise ValueError(n)
    out = np.empty_like(a)
    small = np.abs(a) < 1.0
    a_s = a[small]
    acc = np.zeros_like(a_s)
    term = a_s.copy()
    for k in range(12):
        acc += term * 2.0 / (n + 2 * k + 2)
        term = -term * a_s**2 / ((2 * k + 2) * (2 * k + 3))
    out[small] = acc
    a_l = a[~small]
    out[~small] = 2 * (np.sin(a_l) - a_l * np.cos(a_l)) / a_l**2
    return out


def sine_inner_products(fe: FeSpace, j, derivative: bool = False) -> np.ndarray:
    r"""Exact L2 products of the basis with the sine modes ``sqrt(2) sin(j pi x)``.

    With ``derivative=True`` the products of the derivatives,
    ``(phi_i', sqrt(2) j pi cos(j pi x))``, are returned instead.

    Each element contribution is written about the element midpoint ``m`` as
    a combination of the moments ``int s^n cos(a s)`` and ``int s^n sin(a s)``
    with ``a = j pi h / 2``; these are evaluated in closed form, switching to
    their Taylor series for ``|a| < 1`` where the closed form cancels.

    Returns an array of shape ``(n_dofs,)`` for scalar ``j`` and
    ``(n_dofs, len(j))`` otherwise.
    """
    scalar = np.ndim(j) == 0
    jj = np.atleast_1d(np.asarray(j, dtype=float))
    if np.any(jj < 1):
        raise ConfigError("mode index j must be >= 1")
    h = fe.h
    omega = np.pi * jj
    a = 0.5 * h * omega
    c0, s1, c2 = _cos_moments(a, 0), _sin_moments(a, 1), _cos_moments(a, 2)
    mids = 0.5 * (fe.mesh.nodes[:-1] + fe.mesh.nodes[1:])
    phase = np.outer(mids, omega)
    sm, cm = np.sin(phase), np.cos(phase)
    coef = _SHAPE[fe.degree]
    root2 = math.sqrt(2.0)
    out = np.zeros((fe.n_dofs, jj.size))
    for loc in range(fe.degree + 1):
        q0, q1, q2 = coef[loc]
        if not derivative:
            even = q0 * c0 + q2 * c2
            odd = q1 * s1
            contrib = 0.5 * h * root2 * (sm * even + cm * odd)
        else:
            # shape derivative in s: q1 + 2 q2 s
            even = q1 * c0
            odd = 2 * q2 * s1
            contrib = root2 * omega * (cm * even - sm * odd)
        dofs = fe.cell_dofs[:, loc]
        keep = dofs >= 0
        np.add.at(out, dofs[keep], contrib[keep])
    return out[:, 0] if scalar else out
