"""Exact propagation ``dU/dt = lam L(t) U`` and iterated (Dyson) integrals.

``G_k(t) = int_{t0}^{t} dt1 ... int_{t0}^{t_{k-1}} dt_k L(t1) ... L(t_k)`` obeys
``dG_k/dt = L(t) G_{k-1}(t)`` with ``G_0 = I``, so all orders are transported
together with ``U`` in one adaptive Runge-Kutta pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .models import GeneratorFunction

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_GRID = 512


class StepUnderflow(RuntimeError):
    """The adaptive integrator could not reach the requested tolerance."""


def _as_generator(L):
    if isinstance(L, GeneratorFunction):
        return L
    return GeneratorFunction.from_constant(L)


def _hermite(t, t_a, t_b, y_a, y_b, dy_a, dy_b):
    h = t_b - t_a
    s = (t - t_a) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y_a + h10 * h * dy_a + h01 * y_b + h11 * h * dy_b


@dataclass(frozen=True)
class PropagatorGrid:
    """Propagator ``U_{t0}^t`` and iterated integrals stored on a time grid.

    ``U[i]`` is the superoperator at ``times[i]``; ``G[k, i]`` is ``G_k`` there
    (``G`` has ``k_max + 1`` orders, ``G[0]`` being the identity). ``L_nodes``
    caches ``L(times[i])`` for the cubic Hermite interpolation used off-grid.
    """

    generator: GeneratorFunction
    lam: float
    times: np.ndarray
    U: np.ndarray
    G: np.ndarray
    L_nodes: np.ndarray
    rtol: float
    atol: float

    @property
    def t0(self):
        return self.times[0]

    @property
    def t_max(self):
        return self.times[-1]

    @property
    def k_max(self):
        return self.G.shape[0] - 1

    def _locate(self, t):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t = {t} outside propagated range [{self.times[0]}, {self.times[-1]}]")
        i = int(np.searchsorted(self.times, t))
        if i < len(self.times) and abs(self.times[i] - t) <= 1e-14 * max(1.0, abs(t)):
            return i, None
        if i > 0 and abs(self.times[i - 1] - t) <= 1e-14 * max(1.0, abs(t)):
            return i - 1, None
        i = min(max(i, 1), len(self.times) - 1)
        return i - 1, i

    def _interp(self, t, values, derivs):
        a, b = self._locate(t)
        if b is None:
            return values(a)
        return _hermite(t, self.times[a], self.times[b], values(a), values(b), derivs(a), derivs(b))

    def U_at(self, t):
        return self._interp(
            t, lambda i: self.U[i], lambda i: self.lam * self.L_nodes[i] @ self.U[i]
        )

    def G_at(self, k, t):
        if k == 0:
            return np.eye(self.U.shape[1], dtype=complex)
        if k > self.k_max:
            raise ValueError(f"order {k} not transported (k_max = {self.k_max})")
        return self._interp(
            t, lambda i: self.G[k, i], lambda i: self.L_nodes[i] @ self.G[k - 1, i]
        )

    def derivative_U(self, t):
        """``dU/dt = lam L(t) U(t)`` (no numerical differentiation)."""
        return self.lam * self.generator(t) @ self.U_at(t)

    def dyson_sum(self, order, lam=None, index=None):
        """``sum_{k <= order} lam**k G_k`` at grid index ``index`` (all indices if None)."""
        lam = self.lam if lam is None else lam
        sl = slice(None) if index is None else index
        return sum(lam**k * self.G[k, sl] for k in range(order + 1))


IteratedIntegrals = PropagatorGrid


def transport(L, lam, t0, t_max, k_max=0, grid=None, n_grid=DEFAULT_GRID, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Integrate ``U`` and ``G_1..G_kmax`` together.

    ``grid`` overrides the default of ``n_grid`` uniform storage points on
    ``[t0, t_max]``; it must be increasing and start at ``t0``.
    """
    gen = _as_generator(L)
    D = gen.dim**2
    if grid is None:
        grid = np.linspace(t0, t_max, n_grid)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != t0 or np.any(np.diff(grid) <= 0):
        raise ValueError("storage grid must start at t0 and be strictly increasing")
    n_blocks = 1 + k_max
    eye = np.eye(D, dtype=complex)

    def rhs(t, y):
        Y = y.reshape(n_blocks, D, D)
        Lt = gen(t)
        out = np.empty_like(Y)
        out[0] = lam * (Lt @ Y[0])
        if k_max:
            out[1] = Lt
            for k in range(2, k_max + 1):
                out[k] = Lt @ Y[k - 1]
        return out.ravel()

    y0 = np.zeros((n_blocks, D, D), dtype=complex)
    y0[0] = eye
    if len(grid) == 1:
        Y = y0[None]
    elif grid[-1] == t0:
        Y = np.repeat(y0[None], len(grid), axis=0)
    else:
        sol = solve_ivp(rhs, (grid[0], grid[-1]), y0.ravel(), method="DOP853", t_eval=grid, rtol=rtol, atol=atol)
        if sol.status != 0:
            raise StepUnderflow(f"integration failed at t = {sol.t[-1] if sol.t.size else t0}: {sol.message}")
        Y = sol.y.T.reshape(len(grid), n_blocks, D, D)
        Y[0] = y0
    U = np.ascontiguousarray(Y[:, 0])
    G = np.empty((k_max + 1, len(grid), D, D), dtype=complex)
    G[0] = eye
    for k in range(1, k_max + 1):
        G[k] = Y[:, k]
    L_nodes = np.array([gen(t) for t in grid])
    return PropagatorGrid(gen, float(lam), grid, U, G, L_nodes, rtol, atol)


def propagate(L, lam, t0, t_max, tol=DEFAULT_RTOL, grid=None, n_grid=DEFAULT_GRID, atol=DEFAULT_ATOL):
    """Solve ``dU/dt = lam L(t) U``, ``U(t0) = I`` on a storage grid."""
    return transport(L, lam, t0, t_max, k_max=0, grid=grid, n_grid=n_grid, rtol=tol, atol=atol)


def dyson_terms(L, k_max, t0, t_max, tol=DEFAULT_RTOL, grid=None, n_grid=DEFAULT_GRID, lam=0.0, atol=DEFAULT_ATOL):
    """Iterated integrals ``G_0..G_kmax``; pass ``lam`` to also get ``U`` in the same pass."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    return transport(L, lam, t0, t_max, k_max=k_max, grid=grid, n_grid=n_grid, rtol=tol, atol=atol)


def derivative_U(grid, t):
    """``lam L(t) U(t)`` for a :class:`PropagatorGrid`."""
    return grid.derivative_U(t)
