"""Invariant checks shared by the ``verify`` command.

Each check returns :class:`CheckResult` records carrying the measured value
and its tolerance; randomized checks take an explicit seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import (
    bloch_linear_ansatz,
    gibbs_ansatz,
    renyi_ansatz,
    sqrt_two_level_ansatz,
)
from .linalg import SIGMA_X, SIGMA_Y, SIGMA_Z, apply, gell_mann_basis
from .models import GeneratorFunction, random_gksl, resonance_fluorescence
from .projectors import constant_family, kg_nonlinear, kg_parametric, kg_time_dependent, trajectory_from
from .propagator import transport
from .tcl import loglog_slope, series_vs_exact, time_local_residual


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: str
    passed: bool


def _at_most(name, value, bound):
    return CheckResult(name, float(value), f"<= {bound:g}", bool(value <= bound))


def _within(name, value, target, width):
    return CheckResult(name, float(value), f"{target:g} +- {width:g}", bool(abs(value - target) <= width))


def random_density_matrix(d, rng, mix=0.5):
    """``(1 - mix) I/d + mix * (random pure-state mixture)``; ``mix < 1`` keeps it full rank."""
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    R = X @ X.conj().T
    R /= np.trace(R).real
    return (1 - mix) * np.eye(d) / d + mix * R


def ansatz_zoo():
    """One ansatz per family as ``(name, ansatz, sampler, d)``; ``sampler(rng)`` gives interior averages."""
    gm = gell_mann_basis(3, normalized=False)[1:]
    qutrit_obs = np.array([gm[2], gm[7]])
    pauli_xz = np.array([SIGMA_X, SIGMA_Z])
    nonlinear = sqrt_two_level_ansatz(0.4, f=lambda E: 0.1 * E**2, df=lambda E: 0.2 * E)

    def from_states(ansatz, d, mix):
        return ansatz, lambda rng: ansatz.averages(random_density_matrix(d, rng, mix))

    entries = [
        ("gibbs_qubit", *from_states(gibbs_ansatz(pauli_xz), 2, 0.6), 2),
        ("gibbs_qutrit", *from_states(gibbs_ansatz(qutrit_obs), 3, 0.5), 3),
        ("renyi2_qubit", *from_states(renyi_ansatz(2.0, pauli_xz), 2, 0.6), 2),
        ("renyi3_qutrit", *from_states(renyi_ansatz(3.0, qutrit_obs), 3, 0.5), 3),
        ("linear_xz", *from_states(bloch_linear_ansatz("xz"), 2, 0.8), 2),
        ("two_level_sqrt", nonlinear, lambda rng: np.array([rng.uniform(0.05, 0.8)]), 2),
    ]
    return entries


def projector_law_residuals(n_samples=120, seed=0):
    """Max idempotency, composition and ``P(rho) rho = rho_ans`` residuals over random samples."""
    rng = np.random.default_rng(seed)
    zoo = ansatz_zoo()
    worst = {"idempotency": 0.0, "composition": 0.0, "fixed_point": 0.0}
    for i in range(n_samples):
        name, ansatz, sampler, d = zoo[i % len(zoo)]
        E, E2 = sampler(rng), sampler(rng)
        P, P2 = kg_parametric(ansatz, E), kg_parametric(ansatz, E2)
        worst["idempotency"] = max(worst["idempotency"], np.max(np.abs(P @ P - P)))
        worst["composition"] = max(worst["composition"], np.max(np.abs(P @ P2 - P)))
        if name == "two_level_sqrt":
            # states whose sigma_z average lies in the ansatz domain
            rho = random_density_matrix(2, rng, 0.5)
            rho = rho + (sampler(rng)[0] - np.trace(SIGMA_Z @ rho).real) / 2 * SIGMA_Z
        else:
            rho = random_density_matrix(d, rng, 0.5)
        lhs = apply(kg_nonlinear(ansatz, rho), rho)
        worst["fixed_point"] = max(worst["fixed_point"], np.max(np.abs(lhs - ansatz(ansatz.averages(rho)))))
    return worst


def nonlinear_setup(lam=0.1, alpha=0.4, E0=0.25):
    L0, L1, L, model = resonance_fluorescence(high_temperature=True, gamma=1.0)
    ansatz = sqrt_two_level_ansatz(alpha)
    return L, ansatz, ansatz([E0])


def robertson_residual(lam=0.1, n_times=50, t_max=3.0):
    """``max_t ||P_KG'(t) rho(t)||`` along the exact trajectory."""
    L, ansatz, rho0 = nonlinear_setup(lam)
    prop = transport(L, lam, 0.0, t_max, n_grid=257)
    traj = trajectory_from(prop, rho0)
    family = kg_time_dependent(ansatz, traj, generator=L, lam=lam)
    worst = 0.0
    for t in np.linspace(0.0, t_max, n_times):
        worst = max(worst, np.linalg.norm(apply(family.deriv(t), traj(t))))
    return worst


def time_local_residuals(lam=0.1):
    """Identity residuals for a constant linear projector and the moving KG projector."""
    L0, L1, L, _ = resonance_fluorescence()
    lin = bloch_linear_ansatz("xz")
    E0 = np.array([0.3, 0.5])
    ts = np.linspace(0.1, 3.0, 30)
    const, _, _ = time_local_residual(L, lam, lambda p: constant_family(kg_parametric(lin, E0)), lin(E0), ts)
    Lh, ansatz, rho0 = nonlinear_setup(lam)
    kg, _, _ = time_local_residual(Lh, lam, lambda p: kg_time_dependent(ansatz, trajectory_from(p, rho0), generator=Lh, lam=lam), rho0, ts)
    return const, kg


def random_time_dependent_gksl(seed=0):
    rng = np.random.default_rng(seed)
    La, Lb = random_gksl(2, rng), random_gksl(2, rng)
    return GeneratorFunction.from_terms([(lambda t: 1.0, La), (np.cos, Lb)], name="random_gksl")


def order_slopes(n_values=(1, 2, 3), lams=None, seed=0, t_max=1.0, n_grid=11):
    """Fitted log-log slope of ``max_t ||K_exact - sum lam^n K_n||`` for each truncation order."""
    lams = np.geomspace(0.05, 0.2, 6) if lams is None else np.asarray(lams)
    L = random_time_dependent_gksl(seed)
    gibbs = gibbs_ansatz(np.array([SIGMA_X, SIGMA_Z]))
    family = constant_family(kg_parametric(gibbs, np.array([0.2, -0.3])))
    grid = np.linspace(0.0, t_max, n_grid)
    out = {}
    for n in n_values:
        fit = series_vs_exact(L, lams, family, grid, n)
        out[n] = loglog_slope(lams, fit.errors.max(axis=1))
    return out


def collapse_residual(qs=(0.5, 2.0, 5.0), subsets=("z", "xz", "xyz"), n_points=6, seed=0):
    """Max ``|rho_gibbs(E) - rho_renyi_q(E)|`` for qubit ansatzes over the same Pauli subset."""
    rng = np.random.default_rng(seed)
    table = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}
    worst = 0.0
    for subset in subsets:
        P = np.array([table[c] for c in subset])
        gibbs = gibbs_ansatz(P)
        for _ in range(n_points):
            r = rng.normal(size=len(subset))
            E = r / np.linalg.norm(r) * rng.uniform(0.05, 0.85)
            rho = gibbs(E)
            for q in qs:
                worst = max(worst, np.max(np.abs(rho - renyi_ansatz(q, P)(E))))
    return worst


def run_verify(seed=0):
    """The invariant suite behind ``verify``."""
    from .coverage import check_map_completeness

    results = []
    laws = projector_law_residuals(seed=seed)
    results.append(_at_most("projector_idempotency", laws["idempotency"], 1e-9))
    results.append(_at_most("projector_composition", laws["composition"], 1e-8))
    results.append(_at_most("projector_fixed_point", laws["fixed_point"], 1e-9))
    results.append(_at_most("robertson_condition", robertson_residual(), 1e-6))
    const, kg = time_local_residuals()
    results.append(_at_most("time_local_identity_constant", const, 1e-7))
    results.append(_at_most("time_local_identity_kg", kg, 1e-7))
    for n, (slope, _) in order_slopes(seed=seed).items():
        results.append(_within(f"series_order_{n}", slope, n + 1, 0.2))
    results.append(_at_most("gibbs_renyi_collapse", collapse_residual(seed=seed), 1e-8))
    cov = check_map_completeness()
    results.append(CheckResult("coverage_map", float(len(cov.problems)), "= 0 problems", cov.passed))
    return results
