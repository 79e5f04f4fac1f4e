import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmfield import spectral
from wmfield.exceptions import AlignmentError, ConfigError, NumericalError
from wmfield.level import build_level
from wmfield.spectral import (align_signs, assemble_R, continuous_spectrum, kl_covariance,
                              kl_covariance_lattice, kl_field, mode_overlaps, solve_discrete_eigs,
                              spectral_truncation_coeffs)


def test_continuous_spectrum_examples():
    s = continuous_spectrum(0.5, 1000)
    assert s.lambdas[0] == pytest.approx(10.1196044, rel=1e-7)
    assert s.n_modes == 1000 and s.lambdas.size == 1000
    assert continuous_spectrum(0.0, 2).lambdas[1] == pytest.approx(4 * math.pi**2, rel=1e-15)
    assert np.all(np.diff(s.lambdas) > 0)
    assert s.lambdas[-1] / (1000**2 * math.pi**2) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ConfigError):
        continuous_spectrum(0.5, 0)


def test_one_by_one_pencil():
    b = solve_discrete_eigs(np.array([[6.0]]), np.array([[4.0]]))
    assert b.lambdas_h[0] == pytest.approx(1.5, rel=1e-15)
    assert b.vectors[0, 0] == pytest.approx(0.5, rel=1e-15)


def test_non_pd_input_signals():
    with pytest.raises(NumericalError):
        solve_discrete_eigs(np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))
    with pytest.raises(NumericalError):
        solve_discrete_eigs(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConfigError):
        solve_discrete_eigs(np.eye(2), np.eye(3))


@pytest.mark.parametrize("p", [1, 2])
@pytest.mark.parametrize("level", [0, 2, 4])
def test_discrete_basis_contract(p, level):
    disc = build_level(9, level, p)
    E, lam, M, L = disc.basis.vectors, disc.basis.lambdas_h, disc.M, disc.L
    assert np.all(np.diff(lam) >= 0)
    assert np.max(np.abs(E.T @ M @ E - np.eye(lam.size))) <= 1e-8
    res = np.linalg.norm(L @ E - (M @ E) * lam, axis=0)
    assert np.all(res <= 1e-8 * lam * np.linalg.norm(M @ E, axis=0))
    cont = continuous_spectrum(0.5, lam.size).lambdas
    assert np.all(cont <= lam * (1 + 1e-8))
    R = assemble_R(M, disc.basis)
    assert np.linalg.norm(R @ R.T - M) <= 1e-8 * np.linalg.norm(M)


@pytest.mark.parametrize("level", range(5))
def test_p1_eigenvalues_match_closed_form(level):
    # discrete Dirichlet Laplacian with consistent mass: the sine vectors are exact eigenvectors
    disc = build_level(9, level, 1)
    h = disc.h
    j = np.arange(1, disc.fe.n_dofs + 1)
    theta = j * np.pi * h
    expected = 6 * (1 - np.cos(theta)) / (h**2 * (2 + np.cos(theta))) + 0.25
    np.testing.assert_allclose(disc.basis.lambdas_h, expected, rtol=1e-12)


def test_first_eigenvalue_error_decays_like_h_squared():
    lam1 = math.pi**2 + 0.25
    errs = [build_level(9, lv, 1).basis.lambdas_h[0] - lam1 for lv in range(5)]
    assert all(e > 0 for e in errs)
    ratios = [errs[i] / errs[i + 1] for i in range(4)]
    assert all(3.9 < r < 4.1 for r in ratios)


def test_align_signs_idempotent_and_restores_negation():
    disc = build_level(9, 2, 1)
    again = align_signs(disc.basis)
    np.testing.assert_array_equal(again.vectors, disc.basis.vectors)
    neg = spectral.replace(disc.basis, vectors=-disc.basis.vectors)
    np.testing.assert_array_equal(align_signs(neg).vectors, disc.basis.vectors)
    assert np.all(mode_overlaps(again) > 0)
    assert mode_overlaps(again)[0] >= 0.99


def test_align_signs_detects_unresolved_mode():
    disc = build_level(9, 0, 1)
    E = disc.basis.vectors.copy()
    E[:, [1, 2]] = E[:, [2, 1]]  # mode 2 now carries an odd-index vector: zero overlap
    bad = spectral.replace(disc.basis, vectors=E)
    with pytest.raises(AlignmentError, match="j=2"):
        align_signs(bad)


def test_align_signs_requires_fe():
    b = solve_discrete_eigs(np.array([[2.0]]), np.array([[1.0]]))
    with pytest.raises(ConfigError):
        align_signs(b)


def test_assemble_R_one_by_one():
    b = solve_discrete_eigs(np.array([[3.0]]), np.array([[4.0]]))
    R = assemble_R(np.array([[4.0]]), b)
    assert R[0, 0] == pytest.approx(2.0, rel=1e-15)


def test_load_vector_covariance_is_mass():
    disc = build_level(9, 0, 1)
    n = disc.fe.n_dofs
    draws = 10_000
    xi = np.random.Generator(np.random.Philox(key=11)).standard_normal((n, draws))
    b = disc.R @ xi
    emp = b @ b.T / draws
    M = disc.M
    se = np.sqrt((np.outer(np.diag(M), np.diag(M)) + M**2) / draws)
    assert np.all(np.abs(emp - M) <= 3 * se)


def test_kl_field_examples():
    s = continuous_spectrum(0.5, 1000)
    xi = np.zeros(1000)
    xi[0] = 1.0
    assert kl_field(s, 1.0, xi, 0.5) == pytest.approx(math.sqrt(2) / (math.pi**2 + 0.25), rel=1e-12)
    assert kl_field(s, 1.0, xi, 0.5) == pytest.approx(0.139750, abs=1e-6)
    rng = np.random.default_rng(0)
    z = rng.standard_normal(1000)
    assert abs(kl_field(s, 0.8, z, 0.0)) <= 1e-12
    assert np.all(kl_field(s, 0.8, np.zeros(1000), np.linspace(0, 1, 11)) == 0.0)
    with pytest.raises(ConfigError):
        kl_field(s, 1.0, np.zeros(10), 0.5)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(0, 1), y=st.floats(0, 1), beta=st.sampled_from([0.5, 0.8, 1.0, 1.7]))
def test_kl_covariance_symmetric(x, y, beta):
    s = continuous_spectrum(0.5, 200)
    assert kl_covariance(s, beta, x, y) == kl_covariance(s, beta, y, x)
    assert kl_covariance(s, beta, 0.0, y) == 0.0


def test_kl_covariance_against_long_direct_sum():
    s = continuous_spectrum(0.0, 1000)
    got = kl_covariance(s, 1.0, 0.5, 0.5)
    j = np.arange(1, 100_001, dtype=float)
    brute = float(np.sum(2 * np.sin(j * np.pi / 2) ** 2 / (j * np.pi) ** 4))
    assert abs(got - brute) <= 1e-8
    # full series: 2/pi^4 times the sum over odd j of j^-4 = pi^4/96
    assert abs(got - 1 / 48) <= 1e-8


def test_kl_covariance_lattice_matches_pointwise():
    s = continuous_spectrum(0.5, 300)
    x = np.linspace(0, 1, 7)
    C = kl_covariance_lattice(s, 0.7, x)
    assert np.array_equal(C, C.T)
    for i in (1, 3, 5):
        for k in (2, 4):
            assert C[i, k] == pytest.approx(kl_covariance(s, 0.7, x[i], x[k]), rel=1e-12, abs=1e-16)


def test_truncation_parseval():
    s = continuous_spectrum(0.5, 1000)
    xi = np.random.default_rng(5).standard_normal(1000)
    full = spectral_truncation_coeffs(s, 1.0, xi, 1000)
    np.testing.assert_array_equal(full, xi * s.lambdas ** -1.0)
    part = spectral_truncation_coeffs(s, 1.0, xi, 20)
    x = np.linspace(0, 1, 20001)
    diff = kl_field(s, 1.0, xi, x) - spectral.sine_matrix(20, x) @ part
    w = np.full(x.size, x[1])
    w[[0, -1]] /= 2
    parseval = math.sqrt(float(np.sum(full[20:] ** 2)))
    assert math.sqrt(w @ diff**2) == pytest.approx(parseval, rel=1e-6)
    with pytest.raises(ConfigError):
        spectral_truncation_coeffs(s, 1.0, xi, 1001)


@pytest.mark.parametrize("p", [1, 2])
def test_weyl_ratio(p):
    # a fixed set of modes, resolved on the coarsest level, is approximated better and better
    n_fixed = build_level(9, 0, p, align=False).fe.n_dofs // 2
    j = np.arange(1, n_fixed + 1)
    lam = j**2 * np.pi**2 + 0.25
    worst = []
    for lv in range(5):
        basis = build_level(9, lv, p, align=False).basis
        worst.append(np.max(np.abs(basis.lambdas_h[:n_fixed] / lam - 1)))
    assert all(a > b for a, b in zip(worst, worst[1:]))
    basis = build_level(9, 4, p, align=False).basis
    quarter = basis.lambdas_h.size // 4
    jq = np.arange(1, quarter + 1)
    assert np.max(np.abs(basis.lambdas_h[:quarter] / (jq**2 * np.pi**2 + 0.25) - 1)) <= 0.05
