import math

import numpy as np
import pytest

from conftest import random_matrix
from tclkg.linalg import apply, expm, vectorize
from tclkg.models import GeneratorFunction, commutator_generator, random_gksl, resonance_fluorescence
from tclkg.propagator import derivative_U, dyson_terms, propagate, transport
from tclkg.tcl import loglog_slope


def _time_dependent(seed=3):
    rng = np.random.default_rng(seed)
    La, Lb = random_gksl(2, rng), random_gksl(2, rng)
    return GeneratorFunction.from_terms([(lambda t: 1.0, La), (np.sin, Lb)])


def test_zero_coupling_is_identity():
    _, _, L, _ = resonance_fluorescence()
    prop = propagate(L, 0.0, 0.0, 2.0, n_grid=21)
    assert np.allclose(prop.U, np.eye(4)[None], atol=0)


def test_initial_value_is_exact_identity():
    prop = propagate(_time_dependent(), 0.7, 0.0, 1.0, n_grid=11)
    assert np.array_equal(prop.U[0], np.eye(4))


def test_constant_commutator_matches_dense_exponential(rng):
    H = random_matrix(rng, 3)
    L = commutator_generator(H + H.conj().T)
    prop = propagate(L, 0.4, 0.5, 2.5, n_grid=9)
    for t, U in zip(prop.times, prop.U):
        assert np.max(np.abs(U - expm(0.4 * L * (t - 0.5)))) < 1e-9


def test_trace_and_hermiticity_preserved(rng):
    prop = propagate(_time_dependent(), 0.8, 0.0, 3.0, n_grid=16)
    for _ in range(10):
        X = random_matrix(rng, 2)
        X = X + X.conj().T
        for U in prop.U:
            Y = apply(U, X)
            assert abs(np.trace(Y) - np.trace(X)) < 1e-10
            assert np.max(np.abs(Y - Y.conj().T)) < 1e-10


def test_constant_generator_iterated_integrals(rng):
    L = random_gksl(2, rng)
    G = dyson_terms(L, 4, 1.0, 2.0, n_grid=6)
    for k in range(5):
        for t, Gk in zip(G.times, G.G[k]):
            expected = np.linalg.matrix_power(L, k) * (t - 1.0) ** k / math.factorial(k)
            assert np.max(np.abs(Gk - expected)) < 1e-9


def test_zeroth_iterated_integral_is_identity():
    G = dyson_terms(_time_dependent(), 2, 0.0, 1.0, n_grid=5)
    assert np.array_equal(G.G_at(0, 0.37), np.eye(4))
    assert np.allclose(G.G[0], np.eye(4)[None])


def test_dyson_terms_requires_positive_order():
    with pytest.raises(ValueError):
        dyson_terms(_time_dependent(), 0, 0.0, 1.0)


def test_iterated_integral_derivative_relation():
    L = _time_dependent()
    G = dyson_terms(L, 3, 0.0, 2.0, n_grid=401)
    h = G.times[1] - G.times[0]
    for k in (1, 2, 3):
        dG = (G.G[k, 2:] - G.G[k, :-2]) / (2 * h)
        expected = np.array([L(t) @ G.G[k - 1, i + 1] for i, t in enumerate(G.times[1:-1])])
        assert np.max(np.abs(dG - expected)) < 1e-4


@pytest.mark.parametrize("K", [1, 2, 3])
def test_dyson_truncation_slope(K):
    L = _time_dependent()
    lams = np.geomspace(0.05, 0.2, 6)
    G = dyson_terms(L, K, 0.0, 1.0, n_grid=11)
    errs = []
    for lam in lams:
        U = propagate(L, lam, 0.0, 1.0, n_grid=11).U
        errs.append(np.max(np.abs(G.dyson_sum(K, lam) - U)))
    slope, _ = loglog_slope(lams, errs)
    assert abs(slope - (K + 1)) <= 0.2


def test_derivative_at_start_and_zero_coupling():
    L = _time_dependent()
    prop = propagate(L, 0.6, 0.0, 1.0, n_grid=11)
    assert np.allclose(derivative_U(prop, 0.0), 0.6 * L(0.0))
    assert np.allclose(derivative_U(propagate(L, 0.0, 0.0, 1.0, n_grid=11), 0.5), 0)


def test_derivative_matches_central_differences():
    L = _time_dependent()
    h = 1e-4
    t = 0.8
    prop = propagate(L, 0.9, 0.0, 2.0, grid=np.array([0.0, t - h, t, t + h, 2.0]))
    fd = (prop.U_at(t + h) - prop.U_at(t - h)) / (2 * h)
    assert np.max(np.abs(fd - derivative_U(prop, t))) < 1e-6


def test_derivative_out_of_range():
    prop = propagate(_time_dependent(), 0.5, 0.0, 1.0, n_grid=5)
    with pytest.raises(ValueError):
        derivative_U(prop, 1.5)


def test_cocycle_property():
    L = _time_dependent()
    tol = 1e-10
    full = propagate(L, 0.7, 0.0, 2.0, tol=tol, grid=np.linspace(0.0, 2.0, 21))
    for i1, i2 in [(5, 20), (10, 15), (3, 4)]:
        t1, t2 = full.times[i1], full.times[i2]
        tail = propagate(L, 0.7, t1, t2, tol=tol, n_grid=3)
        lhs = full.U[i2]
        rhs = tail.U[-1] @ full.U[i1]
        assert np.max(np.abs(lhs - rhs)) <= 10 * tol


def test_hermite_interpolation_between_nodes():
    L = _time_dependent()
    coarse = propagate(L, 0.5, 0.0, 2.0, n_grid=101)
    fine = propagate(L, 0.5, 0.0, 2.0, grid=np.array([0.0, 0.7345, 2.0]))
    assert np.max(np.abs(coarse.U_at(0.7345) - fine.U[1])) < 1e-9


def test_grid_must_start_at_t0():
    with pytest.raises(ValueError):
        transport(_time_dependent(), 0.5, 0.0, 1.0, grid=np.array([0.1, 1.0]))


def test_state_propagation_matches_superoperator(rng):
    _, _, L, _ = resonance_fluorescence(n_thermal=0.2)
    prop = propagate(L, 0.3, 0.0, 1.0, n_grid=5)
    X = random_matrix(rng, 2)
    assert np.allclose(prop.U[-1] @ vectorize(X), vectorize(apply(prop.U[-1], X)))
