"""Mean-field equations for the relevant averages under the Kawasaki-Gunton projector.

First order::

    dE/dt = lam Tr(P L(t) rho_ans(E))

Second order adds ``lam**2 Tr(P L(t) G1(t) rho_ans(E))`` and subtracts
``lam**2 Tr(P A C)``, where ``A = (Tr(P L rho_ans), d rho_ans/dE)`` and
``C = (Tr(P G1 rho_ans), d rho_ans/dE)`` are gradient combinations and
``G1(t) = int_{t0}^t L(t1) dt1``; ``E`` is frozen at its current value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp

from .ansatz import DomainViolation, TwoLevelAnsatz
from .io import write_csv
from .linalg import devectorize, vectorize
from .propagator import PropagatorGrid, StepUnderflow, _as_generator
from .tcl import loglog_slope


class DomainExit(RuntimeError):
    """The averages left the ansatz domain at time ``t``."""

    def __init__(self, msg, t):
        super().__init__(msg)
        self.t = t


def _apply(S, rho):
    return devectorize(S @ vectorize(rho), rho.shape[0])


def _combine(coeffs, grads):
    return np.einsum("m,mij->ij", coeffs, grads)


def first_order_rhs(ansatz, L, t, E, lam):
    """``lam Tr(P L(t) rho_ans(E))``."""
    if lam == 0:
        return np.zeros(ansatz.M)
    rho = ansatz(E)
    return lam * ansatz.averages(_apply(_as_generator(L)(t), rho))


def _g1_at(iterated, t):
    if isinstance(iterated, PropagatorGrid):
        return iterated.G_at(1, t)
    return np.asarray(iterated)


def second_order_terms(ansatz, L, iterated, t, E):
    """The three bare contributions ``(first, double, product)`` without powers of ``lam``.

    ``iterated`` is a :class:`PropagatorGrid` holding ``G1`` or the matrix
    ``G1(t)`` itself.
    """
    Lt = _as_generator(L)(t)
    G1 = _g1_at(iterated, t)
    rho, grads = ansatz.eval_and_grad(E)
    L_rho = _apply(Lt, rho)
    G1_rho = _apply(G1, rho)
    first = ansatz.averages(L_rho)
    double = ansatz.averages(_apply(Lt, G1_rho))
    A = _combine(first, grads)
    C = _combine(ansatz.averages(G1_rho), grads)
    product = ansatz.averages(A @ C)
    return first, double, product


def second_order_rhs(ansatz, L, iterated, t, E, lam):
    """``lam first + lam**2 (double - product)``; see :func:`second_order_terms`."""
    if lam == 0:
        return np.zeros(ansatz.M)
    first, double, product = second_order_terms(ansatz, L, iterated, t, E)
    return lam * first + lam**2 * (double - product)


@dataclass
class MeanTrajectory:
    """Averages ``E(t)`` on ``times`` (shape ``(n, M)``) from a mean-field solve."""

    times: np.ndarray
    E: np.ndarray
    order: int
    lam: float
    ansatz: object = field(repr=False, default=None)

    def rho(self, i):
        return self.ansatz(self.E[i])

    def rhos(self):
        return np.array([self.rho(i) for i in range(len(self.times))])

    def to_csv(self, path, exact=None):
        M = self.E.shape[1]
        header = ["t", *(f"E_{m + 1}" for m in range(M))]
        cols = [self.times[:, None], self.E]
        if exact is not None:
            exact = np.asarray(exact).reshape(len(self.times), -1)
            header += [f"exact_{m + 1}" for m in range(M)]
            header += [f"abs_err_{m + 1}" for m in range(M)]
            cols += [exact, np.abs(self.E - exact)]
        return write_csv(path, header, np.hstack(cols))


def _margin(ansatz, E):
    lo, hi = ansatz.bounds
    m = float(min(np.min(E - lo), np.min(hi - E)))
    if isinstance(ansatz, TwoLevelAnsatz) and lo[0] <= E[0]:
        r = ansatz.bloch(E[0])
        m = min(m, 1.0 - float(r @ r))
    return m


def solve_mean(ansatz, L, lam, E0, t0, t_max, order=2, tol=1e-10, grid=None, n_grid=512, iterated=None):
    """Integrate the first- or second-order mean-field equation from ``E0``.

    For ``order=2`` the integral ``G1`` is carried along in the same adaptive
    pass unless a precomputed ``iterated`` grid is given. Ansatzes with
    ``sqrt_coordinate`` are integrated in ``y = sqrt(E)``.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    gen = _as_generator(L)
    E0 = ansatz.check_domain(E0)
    M = ansatz.M
    D = gen.dim**2
    sqrt_coord = bool(getattr(ansatz, "sqrt_coordinate", False))
    if grid is None:
        grid = np.linspace(t0, t_max, n_grid)
    grid = np.asarray(grid, dtype=float)
    carry_g1 = order == 2 and iterated is None

    def to_E(x):
        return x**2 if sqrt_coord else x

    def rhs(t, y):
        x = y[:M].real
        E = to_E(x)
        try:
            if order == 1:
                dE = first_order_rhs(ansatz, gen, t, E, lam)
            else:
                G1 = y[M:].reshape(D, D) if carry_g1 else _g1_at(iterated, t)
                dE = second_order_rhs(ansatz, gen, G1, t, E, lam)
        except DomainViolation as exc:
            raise DomainExit(f"averages left the ansatz domain near t = {t}: {exc}", t) from exc
        # |y| keeps trial stages just past y = 0 continuous so the boundary event can locate the crossing
        dx = dE / (2 * np.abs(x)) if sqrt_coord else dE
        if not carry_g1:
            return dx
        return np.concatenate([dx.astype(complex), gen(t).ravel()])

    def boundary(t, y):
        x = y[:M].real
        m = _margin(ansatz, to_E(x))
        if sqrt_coord:
            # E = y**2 only touches the lower bound as y crosses it; watch y itself
            m = min(m, float(np.min(x - np.sqrt(ansatz.bounds[0]))))
        return m

    boundary.terminal = True
    boundary.direction = -1

    x0 = np.sqrt(E0) if sqrt_coord else E0
    y0 = np.concatenate([x0.astype(complex), np.zeros(D * D, dtype=complex)]) if carry_g1 else x0
    if grid[-1] == grid[0]:
        return MeanTrajectory(grid, E0[None].copy(), order, lam, ansatz)
    sol = solve_ivp(rhs, (grid[0], grid[-1]), y0, method="DOP853", t_eval=grid, rtol=tol, atol=tol * 1e-2, events=boundary)
    if sol.status == 1:
        t_star = float(sol.t_events[0][0])
        raise DomainExit(f"averages reach the ansatz boundary at t = {t_star}", t_star)
    if sol.status != 0:
        raise StepUnderflow(sol.message)
    E = to_E(sol.y[:M].real.T)
    return MeanTrajectory(sol.t, E, order, lam, ansatz)


# ---------------------------------------------------------------------------
# Two-level nonlinear example, g(E) = alpha sqrt(E)


def nonlinear_branches(t, lam, alpha, omega, gamma, E0):
    """First-order closed forms ``(E_minus, E_plus) = (sqrt(E0) -+ lam alpha Omega (e^{gamma t/2} - 1)/gamma)**2``."""
    shift = lam * alpha * omega / gamma * np.expm1(gamma * np.asarray(t) / 2)
    y0 = np.sqrt(E0)
    return (y0 - shift) ** 2, (y0 + shift) ** 2


def nonlinear_closed_form(t, lam, alpha, omega, gamma, E0):
    """Second-order solution by quadrature.

    With ``y = sqrt(E)``: ``y' = -lam alpha Omega e^{gamma t/2} / 2 - lam**2 (Omega**2/gamma)(e^{gamma t/2} - 1) y``,
    so ``E = exp(-2 phi) (sqrt(E0) - lam alpha Omega/2 int_0^t exp(gamma s/2 + phi(s)) ds)**2``
    with ``phi(t) = 2 lam**2 Omega**2 / gamma**2 (e^{gamma t/2} - 1 - gamma t/2)``.
    """

    def phi(s):
        return 2 * lam**2 * omega**2 / gamma**2 * (np.expm1(gamma * s / 2) - gamma * s / 2)

    out = []
    for ti in np.atleast_1d(t):
        integral, _ = quad(lambda s: np.exp(gamma * s / 2 + phi(s)), 0.0, ti, epsabs=1e-14, epsrel=1e-13, limit=200)
        out.append(np.exp(-2 * phi(ti)) * (np.sqrt(E0) - lam * alpha * omega / 2 * integral) ** 2)
    return np.array(out)


@dataclass
class BranchReport:
    lams: np.ndarray
    tracked: list
    errors: dict
    slopes: dict
    r2: dict


def branch_monitor(lams, numeric, exact, branches):
    """Which first-order branch the numerical solution follows, and each branch's error order.

    ``numeric`` and ``exact`` have shape ``(n_lam, n_t)``; ``branches`` maps a
    label (``"minus"``, ``"plus"``) to an array of the same shape. For each
    ``lam`` the tracked branch is the one closest to ``numeric`` in sup norm;
    errors are sup-norm distances to ``exact``.
    """
    lams = np.asarray(lams, float)
    numeric, exact = np.asarray(numeric), np.asarray(exact)
    tracked = []
    for i in range(len(lams)):
        dist = {k: np.max(np.abs(v[i] - numeric[i])) for k, v in branches.items()}
        tracked.append(min(dist, key=dist.get))
    errors = {k: np.max(np.abs(np.asarray(v) - exact), axis=1) for k, v in branches.items()}
    slopes, r2 = {}, {}
    positive = lams > 0
    for k, e in errors.items():
        if np.count_nonzero(positive) >= 2 and np.all(e[positive] > 0):
            slopes[k], r2[k] = loglog_slope(lams[positive], e[positive])
        else:
            slopes[k], r2[k] = np.nan, np.nan
    return BranchReport(lams, tracked, errors, slopes, r2)
