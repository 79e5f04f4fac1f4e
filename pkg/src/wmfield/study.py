"""Convergence studies: Monte Carlo field errors, covariance errors and rate fits.

A study is a grid of independent cells ``(p, norm group, beta, level)``.
Cells run on a thread pool whose size never changes the numbers: each cell
is computed by the same sequence of operations, BLAS is pinned to one
thread, and records are collected in cell order.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import (cov_error_L2, cov_error_sup, deterministic_frac_error,
                     field_error_operators, h1_errors, l2_errors, make_grid, sup_errors)
from .exceptions import ConfigError, NotApplicable
from .fracop import (calibrate_k, covariance_equivalence_check, covariance_matrix,
                     exact_discrete_frac, make_sinc_rule, sample_coeffs, split_beta,
                     apply_sinc)
from .level import Discretization, build_level
from .spectral import (continuous_spectrum, eigvec_l2_error, kl_coefficients,
                       kl_covariance_lattice, sine_matrix)

FIELD_NORMS = ("L2", "Linf", "H1semi")
COV_NORMS = ("CovL2", "CovLinf")
FIELD_BETAS = (0.5, 0.8, 1.1, 1.4, 1.7)
COV_BETAS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_SEED = 20190101

# allowed |observed - expected| when flagging a fitted rate
RATE_TOLERANCE = {"L2": 0.2, "H1semi": 0.2, "Linf": 0.25, "CovL2": 0.15, "CovLinf": 0.2}


@dataclass(frozen=True)
class StudyConfig:
    kappa: float = 0.5
    n0: int = 9
    n0_sup: int = 17
    levels: tuple[int, ...] = (0, 1, 2, 3, 4)
    degrees: tuple[int, ...] = (1, 2)
    betas: tuple[float, ...] | None = None
    n_mc: int = 100
    n_kl: int = 1000
    n_ok: int = 1001
    base_seed: int = DEFAULT_SEED
    norms: tuple[str, ...] | None = None
    fit_levels: tuple[int, ...] = (2, 3, 4)
    threads: int = 1

    def __post_init__(self):
        if list(self.levels) != list(range(len(self.levels))):
            raise ConfigError("levels must be contiguous starting at 0")
        if not set(self.fit_levels) <= set(self.levels) or len(self.fit_levels) < 2:
            raise ConfigError("fit_levels must contain at least two of the study levels")
        if any(p not in (1, 2) for p in self.degrees):
            raise ConfigError("degrees must be a subset of {1, 2}")
        if self.n_mc < 1 or self.n_kl < 1 or self.n_ok < 2:
            raise ConfigError("n_mc, n_kl must be positive and n_ok >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.betas is not None and any(not b > 0 for b in self.betas):
            raise ConfigError("betas must be positive")

    def n0_for(self, norm: str) -> int:
        return self.n0_sup if norm in ("Linf", "CovLinf") else self.n0


@dataclass(frozen=True)
class ErrorRecord:
    study: str
    beta: float
    p: int
    norm: str
    level: int
    h: float
    error: float
    n_samples: int = 1
    n_failed: int = 0


@dataclass(frozen=True)
class RateFit:
    observed_rate: float
    intercept: float
    fit_levels: tuple[int, ...]
    expected_rate: float | None = None
    beta: float | None = None
    p: int | None = None
    norm: str | None = None

    @property
    def residual(self) -> float | None:
        if self.expected_rate is None:
            return None
        return abs(self.observed_rate - self.expected_rate)

    def within(self, tol: float) -> bool | None:
        r = self.residual
        return None if r is None else r <= tol


@dataclass
class StudyResult:
    records: list[ErrorRecord]
    fits: list[RateFit]
    samples: dict = field(default_factory=dict, repr=False)
    timings: dict = field(default_factory=dict, repr=False)


def expected_rate(beta: float, p: int, norm: str) -> float:
    """Theoretical convergence order in h for d = 1 and smooth coefficients."""
    formulas = {
        "L2": 2 * beta - 0.5,
        "Linf": 2 * beta - 0.5,
        "H1semi": 2 * beta - 1.5,
        "CovL2": 4 * beta - 0.5,
        "CovLinf": 4 * beta - 1.0,
    }
    if norm not in formulas:
        raise ConfigError(f"unknown norm {norm!r}")
    cap = p if norm == "H1semi" else p + 1
    rate = min(formulas[norm], cap)
    if rate <= 0:
        raise NotApplicable(f"expected {norm} rate {rate:g} <= 0 for beta={beta}")
    return round(rate, 12)


def fit_rate(h, errors, fit_levels=None) -> RateFit:
    """Least-squares slope of ``ln err`` against ``ln h`` (positive means convergence)."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 2 or h.size != e.size:
        raise ConfigError("rate fit needs at least two (h, error) pairs")
    if np.any(~(e > 0)) or np.any(~np.isfinite(e)):
        raise ConfigError("rate fit needs positive finite errors")
    slope, intercept = np.polyfit(np.log(h), np.log(e), 1)
    levels = tuple(fit_levels) if fit_levels is not None else tuple(range(h.size))
    return RateFit(observed_rate=float(slope), intercept=float(intercept), fit_levels=levels)


def draw_xi(base_seed: int, m: int, n_kl: int) -> np.ndarray:
    """Standard normal draw of Monte Carlo sample ``m`` (Philox keyed by ``base_seed ^ m``)."""
    rng = np.random.Generator(np.random.Philox(key=base_seed ^ m))
    return rng.standard_normal(n_kl)


def draw_xi_matrix(base_seed: int, n_mc: int, n_kl: int) -> np.ndarray:
    return np.column_stack([draw_xi(base_seed, m, n_kl) for m in range(n_mc)])


def _sinc_rule_for(frac, h):
    if frac.is_integer:
        return None
    return make_sinc_rule(frac.beta_star, calibrate_k(h, frac.beta))


def sample_field(disc: Discretization, beta: float, xi: np.ndarray) -> np.ndarray:
    """Coefficient columns of sinc-Galerkin samples driven by the columns of ``xi``."""
    frac = split_beta(beta)
    n_h = disc.fe.n_dofs
    b = disc.R @ xi[:n_h]
    return sample_coeffs(frac, _sinc_rule_for(frac, disc.h), disc.M, disc.L, b)


def _aggregate(norm: str, values: np.ndarray) -> float:
    # L1(Omega; Linf) uses the mean, the Hilbert-space norms the root mean square
    total = 0.0
    if norm == "Linf":
        for v in values:
            total += v
        return total / len(values)
    for v in values:
        total += v * v
    return math.sqrt(total / len(values))


def _timed(fn):
    def run(cell):
        t0 = time.perf_counter()
        out = fn(cell)
        return out, time.perf_counter() - t0
    return run


def _run_cells(cells, fn, threads: int):
    """Results and wall-clock seconds per cell, in cell order."""
    if threads == 1:
        pairs = [_timed(fn)(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(_timed(fn), cells))
    return [r for r, _ in pairs], [t for _, t in pairs]


def _levels(cfg: StudyConfig, n0: int, p: int) -> dict[int, Discretization]:
    return {lv: build_level(n0, lv, p, cfg.kappa) for lv in cfg.levels}


def _fits(records: list[ErrorRecord], cfg: StudyConfig, keys) -> list[RateFit]:
    fits = []
    for beta, p, norm in keys:
        rows = [r for r in records if (r.beta, r.p, r.norm) == (beta, p, norm)
                and r.level in cfg.fit_levels]
        rows.sort(key=lambda r: r.level)
        fit = fit_rate([r.h for r in rows], [r.error for r in rows], [r.level for r in rows])
        try:
            exp = expected_rate(beta, p, norm)
        except NotApplicable:
            exp = None
        fits.append(RateFit(fit.observed_rate, fit.intercept, fit.fit_levels, exp, beta, p, norm))
    return fits


def _ordered(norms, allowed):
    bad = [n for n in norms if n not in allowed]
    if bad:
        raise ConfigError(f"unsupported norm(s) {bad} for this study")
    return [n for n in allowed if n in norms]


def run_field_study(cfg: StudyConfig) -> StudyResult:
    """Monte Carlo strong-error study of the sampled field against the KL reference."""
    with threadpool_limits(limits=1):
        return _field_study(cfg)


def _field_study(cfg: StudyConfig) -> StudyResult:
    norms = _ordered(cfg.norms or FIELD_NORMS, FIELD_NORMS)
    betas = tuple(cfg.betas or FIELD_BETAS)
    spectrum = continuous_spectrum(cfg.kappa, cfg.n_kl)
    xi = draw_xi_matrix(cfg.base_seed, cfg.n_mc, cfg.n_kl)
    grid = make_grid(cfg.n_ok)
    grid_sines = sine_matrix(cfg.n_kl, grid.nodes) if "Linf" in norms else None

    groups = []  # (n0, norms sharing that mesh family)
    for n0 in sorted({cfg.n0_for(n) for n in norms}):
        groups.append((n0, [n for n in norms if cfg.n0_for(n) == n0]))

    cells = []
    for p in cfg.degrees:
        for n0, group in groups:
            discs = _levels(cfg, n0, p)
            for lv, disc in discs.items():
                ops = field_error_operators(disc.fe, cfg.n_kl,
                                            grid if "Linf" in group else None, grid_sines)
                for beta in betas:
                    cells.append((p, tuple(group), beta, disc, ops))

    def work(cell):
        p, group, beta, disc, ops = cell
        coeffs = sample_field(disc, beta, xi)
        kl = kl_coefficients(spectrum, beta, xi)
        out = {}
        for norm in group:
            fn = {"L2": l2_errors, "H1semi": h1_errors, "Linf": sup_errors}[norm]
            out[norm] = fn(ops, coeffs, kl)
        return out

    results, secs = _run_cells(cells, work, cfg.threads)
    records, samples, timings = [], {}, {}
    for (p, group, beta, disc, _), res, sec in zip(cells, results, secs):
        timings[(beta, p, "+".join(group), disc.level)] = sec
        for norm in group:
            vals = res[norm]
            ok = np.isfinite(vals)
            samples[(beta, p, norm, disc.level)] = vals
            err = _aggregate(norm, vals[ok]) if ok.any() else float("nan")
            records.append(ErrorRecord("field", beta, p, norm, disc.level, disc.h, err,
                                       int(ok.sum()), int((~ok).sum())))
    records.sort(key=lambda r: (r.p, FIELD_NORMS.index(r.norm), r.beta, r.level))
    keys = [(b, p, n) for p in cfg.degrees for n in norms for b in betas]
    return StudyResult(records, _fits(records, cfg, keys), samples, timings)


def run_cov_study(cfg: StudyConfig) -> StudyResult:
    """Deterministic covariance-function error study (no sampling)."""
    with threadpool_limits(limits=1):
        return _cov_study(cfg)


def _cov_study(cfg: StudyConfig) -> StudyResult:
    norms = _ordered(cfg.norms or COV_NORMS, COV_NORMS)
    betas = tuple(cfg.betas or COV_BETAS)
    spectrum = continuous_spectrum(cfg.kappa, cfg.n_kl)
    grid = make_grid(cfg.n_ok)
    refs = {beta: kl_covariance_lattice(spectrum, beta, grid.nodes) for beta in betas}

    cells = []
    for p in cfg.degrees:
        for norm in norms:
            for lv, disc in _levels(cfg, cfg.n0_for(norm), p).items():
                for beta in betas:
                    cells.append((p, norm, beta, disc))

    def work(cell):
        p, norm, beta, disc = cell
        frac = split_beta(beta)
        cov = covariance_matrix(frac, _sinc_rule_for(frac, disc.h), disc.M, disc.L)
        fn = cov_error_L2 if norm == "CovL2" else cov_error_sup
        return fn(cov, disc.fe, spectrum, beta, grid, refs[beta]).value

    results, secs = _run_cells(cells, work, cfg.threads)
    records = [ErrorRecord("cov", beta, p, norm, disc.level, disc.h, err)
               for (p, norm, beta, disc), err in zip(cells, results)]
    timings = {(beta, p, norm, disc.level): sec for (p, norm, beta, disc), sec in zip(cells, secs)}
    records.sort(key=lambda r: (r.p, COV_NORMS.index(r.norm), r.beta, r.level))
    keys = [(b, p, n) for p in cfg.degrees for n in norms for b in betas]
    return StudyResult(records, _fits(records, cfg, keys), timings=timings)


def tail_sum(exponent: float, N: int, kappa: float = 0.5, explicit: int = 10**6) -> float:
    """``sum_{j > N} (j^2 pi^2 + kappa^2)^(-exponent)``.

    Terms up to ``explicit`` are summed directly.  The remainder is the
    midpoint-rule integral from ``explicit + 1/2``, where ``kappa^2`` is below
    1e-13 relative to ``(pi x)^2`` and is dropped.
    """
    if exponent <= 0.5:
        raise ConfigError("tail sum diverges for exponent <= 1/2")
    j = np.arange(N + 1, max(explicit, N + 1) + 1, dtype=float)
    head = float(np.sum((j**2 * np.pi**2 + kappa**2) ** (-exponent)))
    a = j[-1] + 0.5
    tail = np.pi ** (-2 * exponent) * a ** (1 - 2 * exponent) / (2 * exponent - 1)
    return head + tail


def truncation_rate_check(beta: float, sigma: float, Ns, *, covariance: bool = False,
                          kappa: float = 0.5) -> RateFit:
    """Rate in N of the mean-square truncation error of the KL series.

    Field: ``E||Z - Z_N||^2_{H^sigma} = sum_{j>N} lambda_j^(sigma - 2 beta)``.
    Covariance (``sigma`` ignored): ``||rho - rho_N||^2 = sum_{j>N} lambda_j^(-4 beta)``.
    The returned slope is in ``ln N``; expected ``-(2 beta - sigma - 1/2)``
    or ``-(4 beta - 1/2)``.
    """
    if covariance:
        exponent, expected = 4 * beta, -(4 * beta - 0.5)
    else:
        if not 2 * beta - sigma > 0.5:
            raise ConfigError("truncation rate needs 2 beta - sigma > 1/2")
        exponent, expected = 2 * beta - sigma, -(2 * beta - sigma - 0.5)
    Ns = np.asarray(Ns, dtype=float)
    errs = [math.sqrt(tail_sum(exponent, int(N), kappa)) for N in Ns]
    fit = fit_rate(Ns, errs)
    return RateFit(fit.observed_rate, fit.intercept, tuple(int(n) for n in Ns), expected, beta)


def eig_convergence_check(p: int, j_fixed: int, levels=(0, 1, 2, 3, 4), *, n0: int = 9,
                          kappa: float = 0.5, fit_levels=(2, 3, 4)) -> tuple[RateFit, RateFit]:
    """Rates of ``lambda_{j,h} - lambda_j`` (expected 2p) and ``||e_j - e_{j,h}||`` (expected p+1)."""
    lam = j_fixed**2 * np.pi**2 + kappa**2
    hs, eig_err, vec_err = [], [], []
    for lv in levels:
        disc = build_level(n0, lv, p, kappa)
        if j_fixed > disc.fe.n_dofs:
            raise ConfigError(f"mode {j_fixed} is not resolved on level {lv}")
        if lv in fit_levels:
            hs.append(disc.h)
            eig_err.append(disc.basis.lambdas_h[j_fixed - 1] - lam)
            vec_err.append(eigvec_l2_error(disc.basis, j_fixed))
    fe_ = fit_rate(hs, eig_err, fit_levels)
    fv = fit_rate(hs, vec_err, fit_levels)
    return (RateFit(fe_.observed_rate, fe_.intercept, fe_.fit_levels, 2 * p, None, p, "eigenvalue"),
            RateFit(fv.observed_rate, fv.intercept, fv.fit_levels, p + 1, None, p, "eigenvector"))


@dataclass(frozen=True)
class SincDecayFit:
    slope: float
    intercept: float
    ks: tuple[float, ...]
    errors: tuple[float, ...]

    expected: float = -math.pi**2 / 2

    @property
    def relative_deviation(self) -> float:
        return abs(self.slope - self.expected) / abs(self.expected)


def sinc_errors(disc: Discretization, beta_star: float, ks, v: np.ndarray) -> list[float]:
    """``||Q_k M v - L_h^{-beta_star} v|| / ||v||`` for each step ``k``."""
    exact = exact_discrete_frac(disc.basis, beta_star, v)
    Mv = disc.M @ v
    out = []
    for k in ks:
        q = apply_sinc(beta_star, make_sinc_rule(beta_star, k), disc.M, disc.L, Mv)
        out.append(float(np.linalg.norm(q - exact) / np.linalg.norm(v)))
    return out


def sinc_decay_check(beta_star: float, level: int = 2, ks=(0.8, 0.6, 0.45, 0.35, 0.28), *,
                     p: int = 1, n0: int = 9, kappa: float = 0.5, seed: int = DEFAULT_SEED) -> SincDecayFit:
    """Fit ``ln err = a + slope / k``; the quadrature error predicts ``slope = -pi^2/2``."""
    if not 0.05 <= beta_star <= 0.95:
        raise ConfigError("sinc decay check needs beta_star in [0.05, 0.95]")
    disc = build_level(n0, level, p, kappa, align=False)
    v = np.random.Generator(np.random.Philox(key=seed)).standard_normal(disc.fe.n_dofs)
    ks = tuple(float(k) for k in ks)
    errs = sinc_errors(disc, beta_star, ks, v)
    slope, intercept = np.polyfit(1.0 / np.asarray(ks), np.log(errs), 1)
    return SincDecayFit(float(slope), float(intercept), ks, tuple(errs))


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str


def run_validation(quick: bool = False, kappa: float = 0.5) -> list[SuiteResult]:
    """Self-checks of the discretization: eigenpairs, sinc decay, truncation,
    covariance equivalence and the deterministic fractional Galerkin error."""
    levels = (0, 1, 2) if quick else (0, 1, 2, 3, 4)
    fit_levels = levels[-3:]
    out = []
    with threadpool_limits(limits=1):
        worst = []
        for p in (1, 2):
            for j in (1, 2):
                fe_, fv = eig_convergence_check(p, j, levels, kappa=kappa, fit_levels=fit_levels)
                worst.append(max(fe_.residual, fv.residual))
        out.append(SuiteResult("eigenpairs", max(worst) <= 0.3,
                               f"max |slope - expected| = {max(worst):.3f} (tol 0.3)"))

        devs = [sinc_decay_check(bs, 2, p=p, kappa=kappa).relative_deviation
                for p in (1, 2) for bs in ((0.5,) if quick else (0.1, 0.4, 0.5, 0.7))]
        out.append(SuiteResult("sinc-decay", max(devs) <= 0.15,
                               f"max relative slope deviation = {max(devs):.3f} (tol 0.15)"))

        tr = [truncation_rate_check(b, 0, (50, 100, 200, 400), covariance=c, kappa=kappa)
              for b in (0.5, 1.0, 1.7) for c in (False, True)]
        dev = max(f.residual for f in tr)
        out.append(SuiteResult("truncation", dev <= 0.1, f"max |slope - expected| = {dev:.3f} (tol 0.1)"))

        res = 0.0
        for p in (1, 2):
            for lv in levels:
                disc = build_level(9, lv, p, kappa)
                for beta in (0.5, 1.0, 1.4, 2.0):
                    frac = split_beta(beta)
                    res = max(res, covariance_equivalence_check(
                        frac, _sinc_rule_for(frac, disc.h), disc.M, disc.L, disc.R))
        out.append(SuiteResult("cov-equivalence", res <= 1e-8, f"max residual = {res:.2e} (tol 1e-8)"))

        g = np.zeros(1)
        g[0] = 1.0
        worst = 0.0
        for beta in (0.5, 1.0):
            errs = deterministic_frac_error(beta, 0, g, levels[-3:], kappa=kappa)
            hs = [2.0**-3 * 2.0**-lv for lv in levels[-3:]]
            worst = max(worst, abs(fit_rate(hs, errs).observed_rate - 2.0))
        out.append(SuiteResult("deterministic-galerkin", worst <= 0.25,
                               f"max |L2 slope - 2| = {worst:.3f} (tol 0.25)"))
    return out


def default_threads() -> int:
    raw = os.environ.get("WM_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"WM_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("WM_THREADS must be >= 1")
    return n
