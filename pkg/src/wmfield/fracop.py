"""Fractional inverse powers of the Galerkin operator and field sampling.

For ``beta = n + beta_star`` with integer ``n`` and ``beta_star`` in [0, 1),
the coefficient vector of a sample is obtained from a load vector
``b ~ N(0, M)`` by ``n`` exact solves with ``L`` and, when ``beta_star > 0``,
the sinc quadrature

    Q_k = (2 k sin(pi beta_star) / pi) * sum_l exp(2 beta_star l k) (M + exp(2 l k) L)^{-1},

with ``l`` running from ``-K_minus`` to ``K_plus``.  ``Q_k`` maps load-type
vectors (dual basis) to coefficient vectors, which is why the integer part
is applied as ``(M L^{-1})^n`` in front of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import ConfigError, NumericalError
from .fem1d import to_banded
from .spectral import DiscreteEigenbasis

# beta_star inside these bands would need ~1/(beta_star k^2) shifted solves
BETA_STAR_BAND = 0.02


@dataclass(frozen=True)
class FractionalExponent:
    beta: float
    n_beta: int
    beta_star: float

    @property
    def is_integer(self) -> bool:
        return self.beta_star == 0.0


@dataclass(frozen=True)
class SincRule:
    beta_star: float
    k: float
    K_minus: int
    K_plus: int

    @property
    def n_nodes(self) -> int:
        return self.K_minus + self.K_plus + 1


@dataclass(frozen=True)
class FieldSample:
    """Coefficients of one realization together with the draw that produced it."""

    fe: object
    coeffs: np.ndarray = field(repr=False)
    xi: np.ndarray = field(repr=False)
    beta: float
    k: float | None
    level: int


def split_beta(beta: float) -> FractionalExponent:
    if not beta > 0 or not math.isfinite(beta):
        raise ConfigError(f"beta must be positive, got {beta!r}")
    n = math.floor(beta)
    return FractionalExponent(beta=float(beta), n_beta=int(n), beta_star=float(beta - n))


def calibrate_k(h: float, beta: float) -> float:
    """Sinc step matched to the mesh width, ``k = -1 / (beta ln h)``."""
    if not 0 < h < 1:
        raise ConfigError(f"mesh width must lie in (0, 1), got {h!r}")
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta!r}")
    return -1.0 / (beta * math.log(h))


def make_sinc_rule(beta_star: float, k: float) -> SincRule:
    if not BETA_STAR_BAND <= beta_star <= 1 - BETA_STAR_BAND:
        raise ConfigError(
            f"fractional part {beta_star!r} outside [{BETA_STAR_BAND}, {1 - BETA_STAR_BAND}]")
    if not k > 0:
        raise ConfigError(f"sinc step must be positive, got {k!r}")
    k_minus = math.ceil(math.pi**2 / (4 * beta_star * k**2))
    k_plus = math.ceil(math.pi**2 / (4 * (1 - beta_star) * k**2))
    return SincRule(beta_star=float(beta_star), k=float(k), K_minus=k_minus, K_plus=k_plus)


def _half_bandwidth(A: np.ndarray) -> int:
    rows, cols = np.nonzero(A)
    return int(np.max(np.abs(rows - cols))) if rows.size else 0


def _chol_banded(ab: np.ndarray) -> np.ndarray:
    try:
        return sla.cholesky_banded(ab)
    except sla.LinAlgError as exc:
        raise NumericalError("shifted matrix is not positive definite") from exc


def apply_sinc(beta_star: float, rule: SincRule, M: np.ndarray, L: np.ndarray, v) -> np.ndarray:
    """Apply the sinc quadrature matrix ``Q_k`` to ``v`` (a vector or the columns of a matrix).

    Every shifted matrix ``M + t L`` is factored afresh with a banded
    Cholesky.  For ``t > 1`` the equivalent scaled form
    ``t^(beta_star - 1) (M / t + L)^{-1}`` avoids overflow of ``t``.
    """
    if beta_star in (0.0, 1.0):
        raise ConfigError("sinc quadrature needs beta_star strictly between 0 and 1")
    if abs(beta_star - rule.beta_star) > 1e-15:
        raise ConfigError("sinc rule was built for a different beta_star")
    v = np.asarray(v, dtype=float)
    if v.shape[0] != M.shape[0]:
        raise ConfigError(f"vector length {v.shape[0]} does not match matrix order {M.shape[0]}")
    u = max(_half_bandwidth(M), _half_bandwidth(L))
    Mb, Lb = to_banded(M, u), to_banded(L, u)
    k = rule.k
    out = np.zeros_like(v)
    for ell in range(-rule.K_minus, rule.K_plus + 1):
        x = 2.0 * ell * k
        if ell <= 0:
            weight = math.exp(beta_star * x)
            ab = Mb + math.exp(x) * Lb
        else:
            weight = math.exp((beta_star - 1.0) * x)
            ab = math.exp(-x) * Mb + Lb
        if weight == 0.0:
            continue
        out += weight * sla.cho_solve_banded((_chol_banded(ab), False), v)
    return (2.0 * k * math.sin(math.pi * beta_star) / math.pi) * out


class _IntegerSolver:
    """``L^{-1}`` through one Cholesky factorization, reused for every solve."""

    def __init__(self, L: np.ndarray):
        try:
            self._factor = sla.cho_factor(L)
        except sla.LinAlgError as exc:
            raise NumericalError("stiffness matrix is not positive definite") from exc

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self._factor, v)


def _color(frac: FractionalExponent, rule: SincRule | None, M, L, b) -> np.ndarray:
    """Map load vectors ``b`` to coefficient vectors of ``L_h^{-beta}``-colored fields."""
    n = frac.n_beta
    if frac.is_integer:
        if n < 1:
            raise ConfigError("beta = 0 is not a valid exponent")
        solve = _IntegerSolver(L)
        y = solve(b)
        for _ in range(n - 1):
            y = solve(M @ y)
        return y
    if rule is None:
        raise ConfigError("a sinc rule is required for non-integer beta")
    w = b
    if n:
        solve = _IntegerSolver(L)
        for _ in range(n):
            w = M @ solve(w)
    return apply_sinc(frac.beta_star, rule, M, L, w)


def sample_coeffs(frac: FractionalExponent, rule: SincRule | None, M, L, b) -> np.ndarray:
    """Coefficient vector(s) of the sinc-Galerkin sample for load vector(s) ``b``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != M.shape[0]:
        raise ConfigError(f"load vector length {b.shape[0]} does not match N_h = {M.shape[0]}")
    return _color(frac, rule, M, L, b)


def exact_discrete_frac(basis: DiscreteEigenbasis, beta: float, v) -> np.ndarray:
    """``L_h^{-beta}`` applied to the coefficient vector ``v`` via the eigendecomposition."""
    E = basis.vectors
    v = np.asarray(v, dtype=float)
    proj = E.T @ (basis.mass @ v)
    scale = basis.lambdas_h ** (-beta)
    return E @ (proj * (scale if proj.ndim == 1 else scale[:, None]))


def covariance_matrix(frac: FractionalExponent, rule: SincRule | None, M, L) -> np.ndarray:
    """``Cov(Z) = T M T^T`` with ``T`` the load-to-coefficient map of ``sample_coeffs``."""
    TM = _color(frac, rule, M, L, M)
    C = _color(frac, rule, M, L, np.ascontiguousarray(TM.T))
    return 0.5 * (C + C.T)


def covariance_equivalence_check(frac: FractionalExponent, rule: SincRule | None, M, L, R) -> float:
    """Compare ``Cov(T R xi)`` with ``Cov(T b)``, ``b ~ N(0, M)``.

    Returns the largest entrywise difference relative to the largest entry.
    """
    n = M.shape[0]
    both = _color(frac, rule, M, L, np.hstack([M, R]))  # one pass of shifted solves for T M and T R
    TM, TR = both[:, :n], both[:, n:]
    C_r = TR @ TR.T
    C_m = _color(frac, rule, M, L, np.ascontiguousarray(TM.T))
    C_m = 0.5 * (C_m + C_m.T)
    scale = np.max(np.abs(C_m))
    return float(np.max(np.abs(C_r - C_m)) / scale) if scale > 0 else float(np.max(np.abs(C_r)))
