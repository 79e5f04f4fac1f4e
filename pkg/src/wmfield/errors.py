"""Error functionals between finite element fields and the KL reference.

L2 and H1-seminorm distances split the reference into modes the mesh
resolves and modes it does not.  For the resolved part the pointwise
difference is integrated element by element with a Gauss rule that is exact
to rounding for these frequencies.  The unresolved modes are orthogonal to
the resolved ones and enter through the exact products ``(phi_i, e_j)`` and
Parseval.  Expanding the full square instead (``c^T M c - 2 c^T S a + |a|^2``)
would subtract numbers of size ``||Z||^2`` to obtain ``||Z_h - Z_ref||^2``,
which loses most digits once the error is below about 1e-6 ``||Z||``.

Sup-norm and covariance errors are evaluated on an equidistant grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .fem1d import FeSpace, evaluation_matrix, sine_inner_products
from .fracop import FieldSample, exact_discrete_frac
from .level import build_level
from .spectral import (ContinuousSpectrum, continuous_spectrum, kl_coefficients,
                       kl_covariance_lattice, sine_matrix)

NORMS = ("L2", "H1semi", "Linf", "CovL2", "CovLinf")


@dataclass(frozen=True)
class EvalGrid:
    n_nodes: int
    nodes: np.ndarray = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights on [0, 1]."""
        w = np.full(self.n_nodes, 1.0 / (self.n_nodes - 1))
        w[[0, -1]] *= 0.5
        return w


@dataclass(frozen=True)
class ErrorValue:
    norm_tag: str
    value: float
    level: int | None = None
    beta: float | None = None
    p: int | None = None


def make_grid(n_nodes: int = 1001) -> EvalGrid:
    if n_nodes < 2:
        raise ConfigError("evaluation grid needs at least 2 nodes")
    return EvalGrid(n_nodes=n_nodes, nodes=np.arange(n_nodes, dtype=float) / (n_nodes - 1))


# Gauss points per element for the resolved part of the reference
_GAUSS_PER_ELEMENT = 10


@dataclass(frozen=True)
class FieldErrorOperators:
    """Matrices shared by all field-error evaluations on one finite element space.

    Modes ``j <= n_resolved`` enter through element-wise Gauss quadrature of
    the pointwise difference, the remaining modes through exact inner products.
    """

    fe: FeSpace
    n_resolved: int
    weights: np.ndarray = field(repr=False)
    quad_eval: object = field(repr=False)
    quad_deval: object = field(repr=False)
    quad_sines: np.ndarray = field(repr=False)
    quad_dsines: np.ndarray = field(repr=False)
    high_sines: np.ndarray = field(repr=False)
    high_dsines: np.ndarray = field(repr=False)
    high_mode_sq: np.ndarray = field(repr=False)
    grid_eval: object = field(default=None, repr=False)
    grid_sines: np.ndarray | None = field(default=None, repr=False)


def _element_gauss_rule(fe: FeSpace, n_points: int = _GAUSS_PER_ELEMENT):
    g, w = np.polynomial.legendre.leggauss(n_points)
    nodes = fe.mesh.nodes
    left, width = nodes[:-1], np.diff(nodes)
    x = (left[:, None] + 0.5 * (g[None, :] + 1.0) * width[:, None]).ravel()
    return x, (0.5 * width[:, None] * w[None, :]).ravel()


def field_error_operators(fe: FeSpace, n_modes: int, grid: EvalGrid | None = None,
                          grid_sines: np.ndarray | None = None) -> FieldErrorOperators:
    # modes with at most a quarter wave per element: these are well approximated
    # by V_h, so expanding their squared error would cancel almost all digits
    n_res = min(n_modes, max(1, fe.mesh.n_elements // 2))
    x, w = _element_gauss_rule(fe)
    j_res = np.arange(1, n_res + 1)
    j_high = np.arange(n_res + 1, n_modes + 1)
    geval = gs = None
    if grid is not None:
        geval = evaluation_matrix(fe, grid.nodes)
        gs = grid_sines if grid_sines is not None else sine_matrix(n_modes, grid.nodes)
    return FieldErrorOperators(
        fe=fe, n_resolved=n_res, weights=w,
        quad_eval=evaluation_matrix(fe, x), quad_deval=evaluation_matrix(fe, x, 1),
        quad_sines=sine_matrix(n_res, x),
        quad_dsines=math.sqrt(2.0) * np.pi * j_res * np.cos(np.pi * np.outer(x, j_res)),
        high_sines=sine_inner_products(fe, j_high),
        high_dsines=sine_inner_products(fe, j_high, derivative=True),
        high_mode_sq=(np.pi * j_high) ** 2, grid_eval=geval, grid_sines=gs)


def _split_error(ops, P, Sq, S_high, high_weights, c, a) -> np.ndarray:
    """``||Z_h - Z_ref||`` with ``Z_ref = Z_res + Z_high`` and ``(Z_res, Z_high) = 0``:

        ||Z_h - Z_res||^2 - 2 (Z_h, Z_high) + ||Z_high||^2,

    the first term by quadrature of the difference, the others exactly.
    """
    c2 = np.atleast_2d(c.T).T
    a2 = np.atleast_2d(a.T).T
    n = ops.n_resolved
    diff = P @ c2 - Sq @ a2[:n]
    sq = ops.weights @ diff**2
    if S_high.shape[1]:
        a_high = a2[n:]
        sq = sq - 2.0 * np.einsum("im,im->m", c2, S_high @ a_high) + high_weights @ a_high**2
    return np.sqrt(np.maximum(sq, 0.0))


def l2_errors(ops: FieldErrorOperators, coeffs: np.ndarray, kl: np.ndarray) -> np.ndarray:
    """Per-column L2 errors for coefficient columns ``coeffs`` and KL coefficient columns ``kl``."""
    return _split_error(ops, ops.quad_eval, ops.quad_sines, ops.high_sines,
                        np.ones(ops.high_sines.shape[1]), coeffs, kl)


def h1_errors(ops: FieldErrorOperators, coeffs: np.ndarray, kl: np.ndarray) -> np.ndarray:
    return _split_error(ops, ops.quad_deval, ops.quad_dsines, ops.high_dsines,
                        ops.high_mode_sq, coeffs, kl)


def sup_errors(ops: FieldErrorOperators, coeffs: np.ndarray, kl: np.ndarray) -> np.ndarray:
    if ops.grid_eval is None:
        raise ConfigError("operators were built without an evaluation grid")
    diff = ops.grid_eval @ coeffs - ops.grid_sines @ kl
    return np.max(np.abs(np.atleast_2d(diff.T).T), axis=0)


def _check_provenance(sample: FieldSample, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if sample.xi is None or not np.array_equal(np.asarray(sample.xi), xi):
        raise ConfigError("sample was not generated from the given xi")
    return xi


def field_error_L2(sample: FieldSample, spectrum: ContinuousSpectrum, xi) -> ErrorValue:
    xi = _check_provenance(sample, xi)
    ops = field_error_operators(sample.fe, spectrum.n_modes)
    kl = kl_coefficients(spectrum, sample.beta, xi)
    return ErrorValue("L2", float(l2_errors(ops, sample.coeffs, kl)[0]),
                      sample.level, sample.beta, sample.fe.degree)


def field_error_H1(sample: FieldSample, spectrum: ContinuousSpectrum, xi) -> ErrorValue:
    xi = _check_provenance(sample, xi)
    ops = field_error_operators(sample.fe, spectrum.n_modes)
    kl = kl_coefficients(spectrum, sample.beta, xi)
    return ErrorValue("H1semi", float(h1_errors(ops, sample.coeffs, kl)[0]),
                      sample.level, sample.beta, sample.fe.degree)


def field_error_sup(sample: FieldSample, spectrum: ContinuousSpectrum, xi,
                    grid: EvalGrid) -> ErrorValue:
    xi = _check_provenance(sample, xi)
    ops = field_error_operators(sample.fe, spectrum.n_modes, grid)
    kl = kl_coefficients(spectrum, sample.beta, xi)
    return ErrorValue("Linf", float(sup_errors(ops, sample.coeffs, kl)[0]),
                      sample.level, sample.beta, sample.fe.degree)


def _cov_difference(cov, fe, spectrum, beta, grid, reference=None) -> np.ndarray:
    P = evaluation_matrix(fe, grid.nodes)
    rho_h = P @ (P @ cov).T
    rho_h = 0.5 * (rho_h + rho_h.T)
    if reference is None:
        reference = kl_covariance_lattice(spectrum, beta, grid.nodes)
    return rho_h - reference


def cov_error_L2(cov, fe: FeSpace, spectrum: ContinuousSpectrum, beta: float,
                 grid: EvalGrid, reference: np.ndarray | None = None) -> ErrorValue:
    """Trapezoid-weighted lattice approximation of ``||rho_h - rho_ref||_{L2(D x D)}``.

    ``reference`` may carry a precomputed reference lattice for ``grid``.
    """
    d = _cov_difference(cov, fe, spectrum, beta, grid, reference)
    w = grid.weights
    return ErrorValue("CovL2", float(math.sqrt(w @ (d**2) @ w)), fe.mesh.level, beta, fe.degree)


def cov_error_sup(cov, fe: FeSpace, spectrum: ContinuousSpectrum, beta: float,
                  grid: EvalGrid, reference: np.ndarray | None = None) -> ErrorValue:
    d = _cov_difference(cov, fe, spectrum, beta, grid, reference)
    return ErrorValue("CovLinf", float(np.max(np.abs(d))), fe.mesh.level, beta, fe.degree)


def deterministic_frac_error(beta: float, sigma: int, g_spec, levels, *, p: int = 1,
                             n0: int = 9, kappa: float = 0.5) -> list[float]:
    """``||L^{-beta} g - L_h^{-beta} P_h g||`` per level for ``g = sum_j g_j e_j``.

    ``P_h`` is the L2 projection; ``sigma`` selects the L2 norm (0) or the
    gradient seminorm (1).
    """
    if sigma not in (0, 1):
        raise ConfigError(f"unsupported norm index sigma={sigma!r}; expected 0 or 1")
    g = np.asarray(g_spec, dtype=float)
    spectrum = continuous_spectrum(kappa, g.size)
    u = g * spectrum.lambdas ** (-beta)
    out = []
    for level in levels:
        disc = build_level(n0, level, p, kappa, align=False)
        ops = field_error_operators(disc.fe, g.size)
        load = sine_inner_products(disc.fe, np.arange(1, g.size + 1)) @ g
        proj = np.linalg.solve(disc.M, load)
        uh = exact_discrete_frac(disc.basis, beta, proj)
        err = l2_errors(ops, uh, u) if sigma == 0 else h1_errors(ops, uh, u)
        out.append(float(err[0]))
    return out
