import math
import numpy as np
import pytest

from conftest import random_matrix
from tclkg.ansatz import bloch_linear_ansatz, sqrt_two_level_ansatz
from tclkg.checks import order_slopes, random_time_dependent_gksl, time_local_residuals
from tclkg.io import read_csv
from tclkg.linalg import SIGMA_Z, SingularOnRange
from tclkg.models import commutator_generator as model_commutator
from tclkg.models import random_gksl, resonance_fluorescence
from tclkg.projectors import argyres_kelley, constant_family, kg_parametric, kg_time_dependent, trajectory_from
from tclkg.propagator import dyson_terms, transport
from tclkg.tcl import (
    MTerms,
    compositions,
    exact_coefficients,
    expansion_text,
    loglog_slope,
    m_terms,
    perturbative_coefficients,
    perturbative_I,
    perturbative_I_term,
    perturbative_K,
    perturbative_K_term,
    series_vs_exact,
    time_local_residual,
)


def _linear_family(E=(0.3, 0.5)):
    return constant_family(kg_parametric(bloch_linear_ansatz("xz"), np.array(E)))


def _random_mterms(rng, k_max=3, D=4):
    arr = lambda: np.array([np.zeros((D, D))] + [random_matrix(rng, D) for _ in range(k_max)])
    return MTerms(0.0, arr(), arr(), arr(), arr())


def test_full_projector_gives_bare_generator():
    L = random_time_dependent_gksl(1)
    fam = constant_family(np.eye(4))
    grid = np.linspace(0.0, 1.0, 6)
    co = exact_coefficients(L, 0.3, fam, grid)
    for t, K, I in zip(co.times, co.K, co.I):
        assert np.allclose(K, 0.3 * L(t), atol=1e-12)
        assert np.allclose(I, 0, atol=1e-12)


def test_zero_coupling_gives_zero_coefficients():
    L = random_time_dependent_gksl(2)
    grid = np.linspace(0.0, 1.0, 5)
    ex = exact_coefficients(L, 0.0, _linear_family(), grid)
    assert not np.any(ex.K) and not np.any(ex.I)
    per = perturbative_coefficients(L, 0.0, _linear_family(), grid, 3)
    assert not np.any(per.K) and not np.any(per.I)


def test_compositions_small_cases():
    assert compositions(1) == ((1, (1,)),)
    assert [p for _, p in compositions(3)] == [(3,), (1, 2), (2, 1), (1, 1, 1)]
    assert [s for s, _ in compositions(3)] == [1, -1, -1, 1]
    with pytest.raises(ValueError):
        compositions(0)


def _enumerate_compositions(n):
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in _enumerate_compositions(n - first):
            yield (first, *rest)


@pytest.mark.parametrize("n", range(1, 11))
def test_compositions_match_brute_force(n):
    brute = set(_enumerate_compositions(n))
    got = [p for _, p in compositions(n)]
    assert len(got) == 2 ** (n - 1)
    assert set(got) == brute
    assert all(s == (-1) ** (len(p) - 1) for s, p in compositions(n))


def test_low_order_expansions(rng):
    mt = _random_mterms(rng)
    M, Mc = mt.M, mt.Mc
    assert np.allclose(perturbative_K_term(1, mt), Mc[1])
    assert np.allclose(perturbative_K_term(2, mt), Mc[2] - Mc[1] @ M[1])
    expected = Mc[3] - Mc[1] @ M[2] - Mc[2] @ M[1] + Mc[1] @ M[1] @ M[1]
    assert np.allclose(perturbative_K_term(3, mt), expected)
    assert np.allclose(perturbative_I_term(1, mt), mt.Mct[1])
    expected_I2 = mt.Mct[2] - Mc[1] @ mt.Mt[1]
    assert np.allclose(perturbative_I_term(2, mt), expected_I2)


def test_expansion_text():
    assert expansion_text(3, "K") == ["+Mc3", "-Mc1 M2", "-Mc2 M1", "+Mc1 M1 M1"]
    assert expansion_text(1, "I") == ["+Mct1"]
    assert expansion_text(3, "I") == ["+Mct3", "-Mc1 Mt2", "-Mc2 Mt1", "+Mc1 M1 Mt1"]


def test_series_sums_over_time_lists(rng):
    mts = [_random_mterms(rng) for _ in range(3)]
    K = perturbative_K(2, mts, 0.1)
    I = perturbative_I(2, mts, 0.1)
    for mt, k, i in zip(mts, K, I):
        assert np.allclose(k, 0.1 * perturbative_K_term(1, mt) + 0.01 * perturbative_K_term(2, mt))
        assert np.allclose(i, 0.1 * perturbative_I_term(1, mt) + 0.01 * perturbative_I_term(2, mt))


def test_m_terms_for_constant_generator(rng):
    L = random_gksl(2, rng)
    fam = _linear_family()
    P = fam(0.0)
    Q = np.eye(4) - P
    G = dyson_terms(L, 3, 0.0, 1.5, n_grid=4)
    t = 1.5
    mt = m_terms(fam, G, t)
    for k in range(1, 4):
        Lk = np.linalg.matrix_power(L, k) * t**k / math.factorial(k)
        assert np.allclose(mt.M[k], P @ Lk @ P, atol=1e-9)
        assert np.allclose(mt.Mt[k], P @ Lk @ Q, atol=1e-9)
        Lk1 = np.linalg.matrix_power(L, k) * t ** (k - 1) / math.factorial(k - 1)
        assert np.allclose(mt.Mc[k], P @ Lk1 @ P, atol=1e-9)
    assert np.allclose(mt.Mc[1], P @ L @ P)


def test_m_terms_tilde_vanish_for_full_projector():
    L = random_time_dependent_gksl(4)
    G = dyson_terms(L, 2, 0.0, 1.0, n_grid=5)
    mt = m_terms(constant_family(np.eye(4)), G, 0.5)
    assert not np.any(mt.Mt) and not np.any(mt.Mct)


def test_m_terms_include_projector_derivative_when_requested():
    def bath(t):
        return 0.5 * (np.eye(2) + 0.5 * np.cos(t) * SIGMA_Z)

    fam = argyres_kelley(bath, (2, 2))
    rng = np.random.default_rng(0)
    L = random_gksl(4, rng)
    G = dyson_terms(L, 2, 0.0, 1.0, n_grid=5)
    t = 0.75
    P, Pd = fam(t), fam.deriv(t)
    full = m_terms(fam, G, t, robertson=False)
    rob = m_terms(fam, G, t, robertson=True)
    assert np.allclose(rob.Mc[1], P @ L @ P)
    assert np.allclose(full.Mc[1], Pd @ G.G_at(1, t) @ P + P @ L @ P)
    assert np.allclose(full.Mct[2] - rob.Mct[2], Pd @ G.G_at(2, t) @ (np.eye(16) - P))


def test_first_order_with_constant_projector():
    L = random_time_dependent_gksl(5)
    fam = _linear_family()
    P = fam(0.0)
    grid = np.linspace(0.0, 1.0, 6)
    lams = np.array([0.02, 0.04, 0.08])
    errs = []
    for lam in lams:
        ex = exact_coefficients(L, lam, fam, grid)
        errs.append(max(np.linalg.norm(K - lam * P @ L(t) @ P, 2) for t, K in zip(grid, ex.K)))
    slope, _ = loglog_slope(lams, errs)
    assert abs(slope - 2.0) < 0.2


@pytest.mark.parametrize("n_max", [1, 2, 3])
def test_series_order(n_max):
    L = random_time_dependent_gksl(0)
    fam = _linear_family()
    fit = series_vs_exact(L, np.geomspace(0.05, 0.2, 6), fam, np.linspace(0.0, 1.0, 6), n_max)
    slope, r2 = loglog_slope(fit.lams, fit.errors.max(axis=1))
    assert abs(slope - (n_max + 1)) <= 0.2
    assert fit.errors.shape == (6, 6)


def test_series_slopes_with_gibbs_projector():
    for n, (slope, _) in order_slopes().items():
        assert abs(slope - (n + 1)) <= 0.2


def test_resonance_fluorescence_sigma_z_coefficient():
    omega, gamma = 1.0, 1.0
    _, _, L, _ = resonance_fluorescence(omega=omega, gamma0=gamma)
    a = bloch_linear_ansatz("xz", bounds=(-np.inf, np.inf))
    fam = _linear_family()
    grid = np.linspace(0.0, 2.0, 5)
    lams = np.array([0.05, 0.1, 0.2])
    errs = []
    for lam in lams:
        K = exact_coefficients(L, lam, fam, grid).K
        diffs = []
        for t, Kt in zip(grid, K):
            # slope of the sigma_z average of K rho_ans(E) in E_z
            drho = a([0.0, 1.0]) - a([0.0, 0.0])
            coef = np.trace(SIGMA_Z @ _apply(Kt, drho)).real
            diffs.append(abs(coef - 2 * lam**2 * omega**2 / gamma * (1 - np.exp(gamma * t / 2))))
        errs.append(max(diffs))
    errs = np.array(errs)
    assert np.all(errs <= 5 * lams**3)
    slope, _ = loglog_slope(lams, errs)
    assert slope >= 2.8


def _apply(S, X):
    v = S @ X.reshape(-1, order="F")
    return v.reshape(X.shape, order="F")


def test_time_local_identity():
    const, kg = time_local_residuals()
    assert const <= 1e-7
    assert kg <= 1e-7


def test_consistent_initial_condition_kills_inhomogeneity():
    _, _, L, _ = resonance_fluorescence(n_thermal=0.2)
    lin = bloch_linear_ansatz("xz")
    E0 = np.array([0.3, 0.5])
    fam = constant_family(kg_parametric(lin, E0))
    _, _, iterm = time_local_residual(L, 0.1, lambda p: fam, lin(E0), np.linspace(0.1, 3.0, 10))
    assert np.max(iterm) <= 1e-10


def test_robertson_and_full_formulas_agree_on_consistent_trajectory():
    _, _, L, _ = resonance_fluorescence(high_temperature=True, gamma=1.0)
    a = sqrt_two_level_ansatz(0.4)
    rho0 = a([0.25])
    lam = 0.1
    prop = transport(L, lam, 0.0, 3.0, grid=np.linspace(0.0, 3.0, 61))
    fam = kg_time_dependent(a, trajectory_from(prop, rho0), generator=L, lam=lam)
    full = exact_coefficients(L, lam, fam, prop)
    rob = exact_coefficients(L, lam, fam, prop, robertson=True)
    v0 = rho0.reshape(-1, order="F")
    worst = 0.0
    for i, t in enumerate(prop.times):
        P_rho = fam(t) @ prop.U[i] @ v0
        worst = max(worst, np.linalg.norm((full.K[i] - rob.K[i]) @ P_rho))
    assert worst <= 1e-6


def test_singular_on_range_reports_time():
    # projector keeping only the sigma_x average; a rotation about z kills it at pi/2
    P = kg_parametric(bloch_linear_ansatz("x"), [0.0])
    L = model_commutator(SIGMA_Z / 2)
    grid = np.array([0.0, 0.5, np.pi / 2, 2.0])
    with pytest.raises(SingularOnRange) as info:
        exact_coefficients(L, 1.0, constant_family(P), grid)
    assert np.isclose(info.value.t, np.pi / 2)


def test_coefficient_csv_export(tmp_path):
    L = random_time_dependent_gksl(3)
    co = exact_coefficients(L, 0.1, _linear_family(), np.linspace(0.0, 1.0, 4))
    path = co.to_csv(tmp_path / "K.csv")
    header, rows = read_csv(path)
    assert header[:3] == ["t", "re_0_0", "im_0_0"] and header[-1] == "order"
    assert len(header) == 2 + 2 * 16 and len(rows) == 4
    assert rows[0][-1] == "exact"
    row = np.array([float(x) for x in rows[2][1:-1]])
    assert np.allclose(row[0::2] + 1j * row[1::2], co.K[2].ravel())
    second = co.to_csv(tmp_path / "K2.csv")
    assert path.read_bytes() == second.read_bytes()
