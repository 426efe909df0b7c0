import numpy as np
import pytest

from tclkg.ansatz import bloch_linear_ansatz, sqrt_two_level_ansatz
from tclkg.experiments import (
    ExperimentReport,
    alpha0_error_coefficient,
    exact_oracle,
    fit_order,
    lambda4_error_coefficient,
    limit_solution,
    linear_projector_coefficients,
    run_error_scaling,
    run_nonlinear_example,
    run_wick_rotation,
)
from tclkg.kg_dynamics import second_order_rhs, solve_mean
from tclkg.models import ExponentialOverflow, ResonanceFluorescenceModel
from tclkg.propagator import dyson_terms

LINEAR = bloch_linear_ansatz("xz", bounds=(-np.inf, np.inf))
TIMES = np.linspace(0.0, 3.0, 31)


def _oracle(model, lam, E0=(0.3, 0.5), **kw):
    return exact_oracle(model.free_generator(), model.drive_generator(), lam, LINEAR(list(E0)), TIMES, LINEAR.P, **kw)


@pytest.mark.parametrize("model", [ResonanceFluorescenceModel(), ResonanceFluorescenceModel(gamma0=-1.0),
                                   ResonanceFluorescenceModel(n_thermal=0.4)])
def test_oracle_without_drive_coupling_is_constant(model):
    assert np.allclose(_oracle(model, 0.0), [0.3, 0.5], atol=1e-10)


def test_zero_rabi_frequency_makes_all_trajectories_agree():
    model = ResonanceFluorescenceModel(omega=0.0, n_thermal=0.2)
    L = model.interaction_generator()
    exact = _oracle(model, 0.2)
    first = solve_mean(LINEAR, L, 0.2, [0.3, 0.5], 0.0, 3.0, order=1, grid=TIMES).E
    second = solve_mean(LINEAR, L, 0.2, [0.3, 0.5], 0.0, 3.0, order=2, grid=TIMES).E
    assert np.max(np.abs(exact - first)) < 1e-10
    assert np.max(np.abs(second - first)) < 1e-12


def test_oracle_self_convergence():
    model = ResonanceFluorescenceModel(n_thermal=0.3)
    coarse = _oracle(model, 0.15, tol=1e-10)
    fine = _oracle(model, 0.15, tol=1e-12)
    assert np.max(np.abs(coarse - fine)) <= 1e-9


@pytest.mark.parametrize("gamma0", [1.0, -1.0])
def test_oracle_shift_and_direct_routes_agree(gamma0):
    model = ResonanceFluorescenceModel(gamma0=gamma0, omega=0.7)
    shifted = _oracle(model, 0.2, method="shift")
    direct = _oracle(model, 0.2, method="direct")
    assert np.max(np.abs(shifted - direct)) < 1e-8


def test_oracle_requires_start_at_zero():
    model = ResonanceFluorescenceModel()
    with pytest.raises(ValueError):
        exact_oracle(model.free_generator(), model.drive_generator(), 0.1, LINEAR([0.0, 0.0]), TIMES + 1, LINEAR.P)


@pytest.mark.parametrize("gamma0,n_thermal", [(1.0, 0.0), (0.7, 0.5), (-1.0, 0.0)])
def test_linear_projector_coefficients_match_general_rhs(gamma0, n_thermal):
    model = ResonanceFluorescenceModel(omega=0.9, gamma0=gamma0, n_thermal=n_thermal)
    L = model.interaction_generator()
    G = dyson_terms(L, 1, 0.0, 2.0, n_grid=201)
    lam = 0.1
    for t in (0.0, 0.4, 1.3, 2.0):
        a, b = linear_projector_coefficients(model, t)
        for Ez in (-0.4, 0.5):
            rhs = second_order_rhs(LINEAR, L, G, t, [0.3, Ez], lam)
            assert np.isclose(rhs[1], lam**2 * (a * Ez + b), rtol=1e-8, atol=1e-13)


def test_limit_equation_steady_state():
    model = ResonanceFluorescenceModel(gamma0=-1.0)
    steady = -model.gamma0 / model.gamma
    assert np.isclose(limit_solution(model, 50.0, 0.5), steady)
    assert np.isclose(limit_solution(model, 3.0, steady), steady)
    a, b = 2 * model.omega**2 / model.gamma, 2 * model.gamma0 * model.omega**2 / model.gamma**2
    assert np.isclose(a * steady + b, 0.0)


def test_wick_rotation_refuses_positive_gamma():
    with pytest.raises(ExponentialOverflow):
        run_wick_rotation(ResonanceFluorescenceModel(gamma0=1.0))


def test_error_coefficients_vanish_at_start():
    model = ResonanceFluorescenceModel(n_thermal=0.3)
    assert abs(lambda4_error_coefficient(model, 0.0, 0.5)) < 1e-12
    hot = ResonanceFluorescenceModel(high_temperature=True, gamma_override=1.0)
    assert abs(alpha0_error_coefficient(hot, 0.0, 0.25)) < 1e-12


def test_lambda4_coefficient_by_richardson():
    # second-order residual between two couplings isolates the lam^4 term
    model = ResonanceFluorescenceModel()
    L = model.interaction_generator()
    t = np.linspace(0.0, 3.0, 13)
    errs = {}
    for lam in (0.04, 0.08):
        E = solve_mean(LINEAR, L, lam, [0.3, 0.5], 0.0, 3.0, grid=t, tol=1e-12).E[:, 1]
        ex = exact_oracle(model.free_generator(), model.drive_generator(), lam, LINEAR([0.3, 0.5]), t, LINEAR.P)[:, 1]
        errs[lam] = E - ex
    # e(lam) = c4 lam^4 + c6 lam^6 => c4 = (64 e(0.04) - e(0.08)) / (48 * 0.04^4)
    c4 = (64 * errs[0.04] - errs[0.08]) / (48 * 0.04**4)
    coef = lambda4_error_coefficient(model, t, 0.5)
    big = np.abs(coef) > 0.05 * np.max(np.abs(coef))
    assert np.max(np.abs(c4[big] / coef[big] - 1)) < 0.05


def test_fit_requires_five_points():
    with pytest.raises(ValueError):
        fit_order([0.1, 0.2, 0.3, 0.4], [1, 2, 3, 4])
    slope, r2 = fit_order(np.geomspace(0.1, 1, 5), np.geomspace(0.1, 1, 5) ** 3)
    assert np.isclose(slope, 3.0) and np.isclose(r2, 1.0)


def test_report_bookkeeping(tmp_path):
    rep = ExperimentReport("demo", {"a": 1})
    rep.check_at_most("small", 0.5, 1.0, "x.csv")
    rep.check_within("slope", 3.9, 4.0, 0.2)
    assert rep.passed
    rep.check_at_most("large", 2.0, 1.0)
    assert not rep.passed and not rep.metric("large").passed
    path = rep.write_summary(tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "# experiment demo"
    assert "experiment,metric,value,tolerance,status,data" in lines
    assert lines[-1] == "demo,large,2,<= 1,FAIL,"


def test_error_scaling_outputs_are_byte_stable(tmp_path):
    kw = dict(lams=np.geomspace(0.05, 0.2, 5), n_grid=41)
    a = run_error_scaling(out_dir=tmp_path / "a", **kw)
    b = run_error_scaling(out_dir=tmp_path / "b", **kw)
    assert len(a.files) == 7
    for fa, fb in zip(a.files, b.files):
        assert (tmp_path / "a").joinpath(fa.split("/")[-1]).read_bytes() == open(fb, "rb").read()
    strip = lambda rep, d: [line.replace(str(tmp_path / d), "") for line in rep.summary_lines()]
    assert strip(a, "a") == strip(b, "b")


def test_nonlinear_example_small_sweep():
    rep = run_nonlinear_example(lams=np.geomspace(0.02, 0.2, 5), n_grid=61)
    assert rep.metric("closed_form_err").passed
    assert rep.metric("first_order_vs_minus_branch").passed
    assert rep.metric("f_invariance").value <= 1e-10
    assert rep.metric("tracks_minus_branch").passed


def test_nonlinear_ansatz_used_by_example_is_valid():
    a = sqrt_two_level_ansatz(0.4, f=lambda E: 0.1 * E**2, df=lambda E: 0.2 * E)
    assert a.in_domain([0.25])
