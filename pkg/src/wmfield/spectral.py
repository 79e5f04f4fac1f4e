"""Continuous and discrete eigenpairs of ``L = -d^2/dx^2 + kappa^2`` on (0, 1).

The continuous pairs are ``lambda_j = j^2 pi^2 + kappa^2`` and
``e_j(x) = sqrt(2) sin(j pi x)``.  The discrete pairs solve the pencil
``L e = lambda M e`` in the finite element space.  The truncated
Karhunen-Loeve series built from the continuous pairs is the reference
field and covariance for all error studies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .exceptions import AlignmentError, ConfigError, NumericalError
from .fem1d import FeSpace, sine_inner_products

ALIGN_THRESHOLD = 1e-3


@dataclass(frozen=True)
class ContinuousSpectrum:
    kappa: float
    n_modes: int
    lambdas: np.ndarray = field(repr=False)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.n_modes + 1)


@dataclass(frozen=True)
class DiscreteEigenbasis:
    """``M``-orthonormal eigenvectors stored as the columns of ``vectors``."""

    fe: FeSpace | None
    lambdas_h: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)


def continuous_spectrum(kappa: float, n_modes: int) -> ContinuousSpectrum:
    if n_modes < 1:
        raise ConfigError("n_modes must be >= 1")
    j = np.arange(1, n_modes + 1, dtype=float)
    lambdas = j**2 * np.pi**2 + kappa**2
    return ContinuousSpectrum(kappa=float(kappa), n_modes=int(n_modes), lambdas=lambdas)


def solve_discrete_eigs(L: np.ndarray, M: np.ndarray, fe: FeSpace | None = None) -> DiscreteEigenbasis:
    """Full spectrum of the pencil ``(L, M)`` by Cholesky reduction.

    The reduction factors the stiffness, ``L = C C^T``, and diagonalizes the
    symmetric matrix ``C^{-1} M C^{-T}`` whose eigenvalues are ``1/lambda``.
    Eigenvalue errors of a dense solver scale with the largest eigenvalue, so
    this puts the rounding on the high modes and keeps the low end of the
    spectrum accurate to a few ulps (reducing with ``M`` does the opposite).
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if L.shape != M.shape or L.shape[0] != L.shape[1]:
        raise ConfigError("L and M must be square matrices of the same order")
    try:
        C = sla.cholesky(L, lower=True)
    except sla.LinAlgError as exc:
        raise NumericalError("stiffness matrix is not positive definite") from exc
    X = sla.solve_triangular(C, M, lower=True)
    A = sla.solve_triangular(C, X.T, lower=True)
    A = 0.5 * (A + A.T)
    try:
        mu, V = sla.eigh(A)
    except sla.LinAlgError as exc:
        raise NumericalError("symmetric eigensolver failed") from exc
    if mu[0] <= 0:
        raise NumericalError("mass matrix is not positive definite")
    mu, V = mu[::-1], V[:, ::-1]
    E = sla.solve_triangular(C, V, lower=True, trans="T") / np.sqrt(mu)
    return DiscreteEigenbasis(fe=fe, lambdas_h=1.0 / mu, vectors=E, mass=M)


def mode_overlaps(basis: DiscreteEigenbasis) -> np.ndarray:
    """``(e_j, e_{j,h})_{L2}`` for j = 1..N_h."""
    fe = basis.fe
    S = sine_inner_products(fe, np.arange(1, fe.n_dofs + 1))
    return np.einsum("ij,ij->j", S, basis.vectors)


def align_signs(basis: DiscreteEigenbasis, spectrum: ContinuousSpectrum | None = None) -> DiscreteEigenbasis:
    """Flip each discrete eigenvector so that it has positive overlap with ``e_j``.

    ``spectrum`` is accepted for symmetry with the other routines; the
    continuous eigenfunctions do not depend on kappa.
    """
    if basis.fe is None:
        raise ConfigError("sign alignment needs the finite element space")
    ip = mode_overlaps(basis)
    bad = np.flatnonzero(np.abs(ip) < ALIGN_THRESHOLD)
    if bad.size:
        raise AlignmentError(
            f"mode j={bad[0] + 1} is not resolved: |(e_j, e_jh)| = {abs(ip[bad[0]]):.2e}")
    signs = np.where(ip < 0, -1.0, 1.0)
    return replace(basis, vectors=basis.vectors * signs)


def assemble_R(M: np.ndarray, basis: DiscreteEigenbasis) -> np.ndarray:
    """``R[i, j] = (phi_i, e_{j,h})``, so that ``R R^T = M``."""
    return M @ basis.vectors


def eigvec_l2_error(basis: DiscreteEigenbasis, j: int) -> float:
    """``||e_j - e_{j,h}||_{L2}`` for an aligned basis."""
    e = basis.vectors[:, j - 1]
    ip = sine_inner_products(basis.fe, j) @ e
    return math.sqrt(max(2.0 - 2.0 * ip, 0.0))


def kl_coefficients(spectrum: ContinuousSpectrum, beta: float, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[0] != spectrum.n_modes:
        raise ConfigError(f"xi must have {spectrum.n_modes} entries, got {xi.shape[0]}")
    w = spectrum.lambdas ** (-beta)
    return xi * (w if xi.ndim == 1 else w[:, None])


def sine_matrix(n_modes: int, x) -> np.ndarray:
    """``S[i, j-1] = sqrt(2) sin(j pi x_i)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return math.sqrt(2.0) * np.sin(np.pi * np.outer(x, np.arange(1, n_modes + 1)))


def kl_field(spectrum: ContinuousSpectrum, beta: float, xi, x):
    """Truncated KL series ``sum_j xi_j lambda_j^{-beta} e_j(x)``."""
    c = kl_coefficients(spectrum, beta, xi)
    out = sine_matrix(spectrum.n_modes, x) @ c
    return out[0] if np.ndim(x) == 0 else out


def kl_covariance(spectrum: ContinuousSpectrum, beta: float, x: float, y: float) -> float:
    """Truncated series ``sum_j lambda_j^{-2 beta} e_j(x) e_j(y)``, summed from high j down."""
    j = spectrum.modes[::-1]
    terms = spectrum.lambdas[::-1] ** (-2 * beta) * (
        2.0 * np.sin(j * np.pi * x) * np.sin(j * np.pi * y))
    total = 0.0
    for t in terms:
        total += t
    return total


def kl_covariance_lattice(spectrum: ContinuousSpectrum, beta: float, x) -> np.ndarray:
    """Reference covariance on the tensor lattice ``x × x`` (exactly symmetric)."""
    S = sine_matrix(spectrum.n_modes, x)[:, ::-1]
    G = S * spectrum.lambdas[::-1] ** (-beta)
    C = G @ G.T
    return 0.5 * (C + C.T)


def spectral_truncation_coeffs(spectrum: ContinuousSpectrum, beta: float, xi, N: int) -> np.ndarray:
    """First ``N`` KL coefficients of the reference field."""
    if not 1 <= N <= spectrum.n_modes:
        raise ConfigError(f"truncation N must lie in [1, {spectrum.n_modes}]")
    return kl_coefficients(spectrum, beta, xi)[:N]
