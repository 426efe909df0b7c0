"""Ansatz families ``rho_ans(E)`` parameterized by averages of relevant observables.

Every family satisfies ``Tr(P_m rho_ans(E)) = E_m`` and exposes the gradient
``d rho_ans / d E_m`` as an ``(M, d, d)`` array. Gibbs and Renyi families are
reparameterized from their Lagrange multipliers ``beta`` by a damped Newton
solve; their gradients come from the implicit function theorem, so the
differentiated consistency ``Tr(P_m grad_n) = delta_mn`` holds to solver
precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import SIGMA_X, SIGMA_Y, SIGMA_Z, dagger, expm_frechet_block, is_hermitian


class AnsatzError(ValueError):
    pass


class DomainViolation(AnsatzError):
    pass


class PositivityViolation(DomainViolation):
    pass


class BiorthogonalityViolation(AnsatzError):
    pass


class NewtonDiverged(AnsatzError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class RelevantObservables:
    """Hermitian ``P_1..P_M``, linearly independent together with the identity."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=complex)
        if P.ndim == 2:
            P = P[None]
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValueError(f"observables must be a stack of square matrices, got shape {P.shape}")
        for m, Pm in enumerate(P):
            if not is_hermitian(Pm, 1e-12):
                raise ValueError(f"observable {m} is not Hermitian")
        d = P.shape[1]
        basis = np.concatenate([np.eye(d, dtype=complex)[None], P]).reshape(len(P) + 1, -1)
        gram = basis.conj() @ basis.T
        smin = np.linalg.svd(gram, compute_uv=False)[-1]
        if smin <= 1e-10:
            raise ValueError(f"observables and identity are linearly dependent (Gram singular value {smin:.2e})")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def M(self):
        return self.P.shape[0]

    @property
    def dim(self):
        return self.P.shape[1]

    def averages(self, rho):
        """``Tr(P_m rho)`` for each ``m`` (real part)."""
        return np.einsum("mij,ji->m", self.P, np.asarray(rho)).real

    def default_bounds(self, shrink=0.9):
        lo, hi = [], []
        for Pm in self.P:
            w = np.linalg.eigvalsh(Pm)
            c, r = (w[0] + w[-1]) / 2, (w[-1] - w[0]) / 2
            lo.append(c - shrink * r)
            hi.append(c + shrink * r)
        return np.array(lo), np.array(hi)


def _observables(P):
    return P if isinstance(P, RelevantObservables) else RelevantObservables(P)


class Ansatz:
    """Base class: subclasses implement ``_eval`` and ``_grad``."""

    name = "ansatz"
    sqrt_coordinate = False

    def __init__(self, observables, bounds=None):
        self.observables = _observables(observables)
        lo, hi = self.observables.default_bounds() if bounds is None else bounds
        self.bounds = (np.atleast_1d(np.asarray(lo, dtype=float)), np.atleast_1d(np.asarray(hi, dtype=float)))

    @property
    def P(self):
        return self.observables.P

    @property
    def M(self):
        return self.observables.M

    @property
    def dim(self):
        return self.observables.dim

    def _coerce(self, E):
        E = np.atleast_1d(np.asarray(E, dtype=float))
        if E.shape != (self.M,):
            raise ValueError(f"expected {self.M} averages, got shape {E.shape}")
        return E

    def in_domain(self, E):
        E = self._coerce(E)
        lo, hi = self.bounds
        return bool(np.all(E >= lo) and np.all(E <= hi))

    def check_domain(self, E):
        E = self._coerce(E)
        if not self.in_domain(E):
            raise DomainViolation(f"E = {E} outside ansatz domain {self.bounds[0]} .. {self.bounds[1]}")
        return E

    def eval(self, E):
        return self._eval(self.check_domain(E))

    def grad(self, E):
        return self._grad(self.check_domain(E))

    def eval_and_grad(self, E):
        E = self.check_domain(E)
        return self._eval(E), self._grad(E)

    def averages(self, rho):
        return self.observables.averages(rho)

    def __call__(self, E):
        return self.eval(E)


# ---------------------------------------------------------------------------
# Gibbs family


class GibbsAnsatz(Ansatz):
    """``exp(-(beta, P)) / Z`` reparameterized by ``E = Tr(P rho)``."""

    name = "gibbs"

    def __init__(self, observables, bounds=None, tol=1e-12, max_iter=100):
        super().__init__(observables, bounds)
        self.tol = tol
        self.max_iter = max_iter

    def state(self, beta):
        """Return ``(rho, drho)`` with ``drho[m] = d rho / d beta_m``."""
        H = np.einsum("m,mij->ij", beta, self.P)
        H = (H + dagger(H)) / 2
        shift = np.linalg.eigvalsh(H)[0]
        A = -(H - shift * np.eye(self.dim))
        X = None
        dX = []
        for Pm in self.P:
            X, Lm = expm_frechet_block(A, -Pm)
            dX.append(Lm)
        Z = np.trace(X).real
        rho = X / Z
        drho = np.array([(dXm - rho * np.trace(dXm).real) / Z for dXm in dX])
        return rho, drho

    def solve(self, E, beta0=None):
        E = self._coerce(E)
        beta = np.zeros(self.M) if beta0 is None else np.array(beta0, dtype=float)
        rho, drho = self.state(beta)
        F = self.averages(rho) - E
        res = np.max(np.abs(F))
        for _ in range(self.max_iter):
            if res <= self.tol:
                return beta, rho, drho
            J = np.einsum("nij,mji->nm", self.P, drho).real
            try:
                step = np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                raise NewtonDiverged(f"singular Jacobian at E = {E}", res) from None
            s = 1.0
            while s > 1e-10:
                trial = beta - s * step
                rho_t, drho_t = self.state(trial)
                F_t = self.averages(rho_t) - E
                res_t = np.max(np.abs(F_t))
                if np.isfinite(res_t) and res_t < res:
                    break
                s /= 2
            else:
                raise NewtonDiverged(f"line search failed at E = {E}", res)
            beta, rho, drho, F, res = trial, rho_t, drho_t, F_t, res_t
        if res <= self.tol:
            return beta, rho, drho
        raise NewtonDiverged(f"no convergence for E = {E} after {self.max_iter} iterations", res)

    def beta(self, E):
        return self.solve(self.check_domain(E))[0]

    def _eval(self, E):
        return self.solve(E)[1]

    def _grad_from(self, drho):
        J = np.einsum("nij,mji->nm", self.P, drho).real
        return np.einsum("mij,mn->nij", drho, np.linalg.inv(J))

    def _grad(self, E):
        return self._grad_from(self.solve(E)[2])

    def eval_and_grad(self, E):
        _, rho, drho = self.solve(self.check_domain(E))
        return rho, self._grad_from(drho)


def gibbs_ansatz(observables, bounds=None):
    return GibbsAnsatz(observables, bounds)


# ---------------------------------------------------------------------------
# Renyi family


def _divided_differences(w, f, df):
    """Matrix of ``(f(w_i) - f(w_j)) / (w_i - w_j)`` with ``f'`` on (near) ties."""
    fw = f(w)
    num = fw[:, None] - fw[None, :]
    den = w[:, None] - w[None, :]
    close = np.abs(den) <= 1e-9 * np.maximum(1.0, np.abs(w[:, None]))
    mid = (w[:, None] + w[None, :]) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(close, df(mid), num / np.where(close, 1.0, den))
    return out


class RenyiAnsatz(Ansatz):
    """``(1 + (q-1)/q (beta, E - P))**(1/(q-1)) / Z_q`` with ``beta(E)`` fixed by consistency."""

    name = "renyi"

    def __init__(self, q, observables, bounds=None, tol=1e-12, max_iter=100):
        if q == 1:
            raise ValueError("Renyi index q = 1 is the Gibbs family")
        super().__init__(observables, bounds)
        self.q = float(q)
        self.tol = tol
        self.max_iter = max_iter
        self.c = (self.q - 1) / self.q
        self.power = 1 / (self.q - 1)

    def _base(self, beta, E):
        d = self.dim
        return (1 + self.c * beta @ E) * np.eye(d) - self.c * np.einsum("m,mij->ij", beta, self.P)

    def state(self, beta, E):
        """Return ``(rho, d rho/d beta, d rho/d E at fixed beta)``."""
        A = self._base(beta, E)
        w, V = np.linalg.eigh((A + dagger(A)) / 2)
        if w[0] < 0 or (self.power < 0 and w[0] <= 0):
            raise DomainViolation(f"Renyi base matrix not positive (min eigenvalue {w[0]:.3e})")
        p = self.power
        f = lambda x: np.abs(x) ** p
        df = lambda x: p * np.abs(x) ** (p - 1)
        Gam = _divided_differences(w, f, df)
        hA = (V * f(w)) @ dagger(V)
        Z = np.trace(hA).real
        rho = hA / Z

        def dstate(D):
            dh = V @ (Gam * (dagger(V) @ D @ V)) @ dagger(V)
            return (dh - rho * np.trace(dh).real) / Z

        dbeta = np.array([dstate(self.c * (E[m] * np.eye(self.dim) - self.P[m])) for m in range(self.M)])
        dE = np.array([dstate(self.c * beta[n] * np.eye(self.dim)) for n in range(self.M)])
        return rho, dbeta, dE

    def solve(self, E, beta0=None):
        E = self._coerce(E)
        beta = np.zeros(self.M) if beta0 is None else np.array(beta0, dtype=float)
        cur = self.state(beta, E)
        F = self.averages(cur[0]) - E
        res = np.max(np.abs(F))
        for _ in range(self.max_iter + 1):
            if res <= self.tol:
                return beta, cur
            J = np.einsum("nij,mji->nm", self.P, cur[1]).real
            try:
                step = np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                raise NewtonDiverged(f"singular Jacobian at E = {E}", res) from None
            s = 1.0
            blocked = False
            while s > 1e-10:
                trial = beta - s * step
                try:
                    nxt = self.state(trial, E)
                except DomainViolation:
                    blocked = blocked or s == 1.0
                    s /= 2
                    continue
                F_t = self.averages(nxt[0]) - E
                res_t = np.max(np.abs(F_t))
                if np.isfinite(res_t) and res_t < res:
                    break
                s /= 2
            else:
                if blocked:
                    # the Newton target lies where the base matrix stops being PSD
                    raise DomainViolation(f"no PSD Renyi state is consistent with E = {E} (residual {res:.2e})")
                raise NewtonDiverged(f"line search failed at E = {E}", res)
            beta, cur, F, res = trial, nxt, F_t, res_t
        raise NewtonDiverged(f"no convergence for E = {E} after {self.max_iter} iterations", res)

    def beta(self, E):
        return self.solve(self.check_domain(E))[0]

    def _eval(self, E):
        return self.solve(E)[1][0]

    def _grad_from(self, state):
        _, dbeta, dE = state
        J = np.einsum("nij,mji->nm", self.P, dbeta).real
        FE = np.einsum("nij,mji->nm", self.P, dE).real - np.eye(self.M)
        dbeta_dE = -np.linalg.solve(J, FE)
        return dE + np.einsum("mij,mn->nij", dbeta, dbeta_dE)

    def _grad(self, E):
        return self._grad_from(self.solve(E)[1])

    def eval_and_grad(self, E):
        _, st = self.solve(self.check_domain(E))
        return st[0], self._grad_from(st)


def renyi_ansatz(q, observables, bounds=None):
    return RenyiAnsatz(q, observables, bounds)


# ---------------------------------------------------------------------------
# Linear family


class LinearAnsatz(Ansatz):
    """``B0 + (E, B)`` with ``Tr(B_k P_m) = delta_km`` (``P_0 = I``)."""

    name = "linear"

    def __init__(self, B0, B, observables, bounds=None, tol=1e-10):
        super().__init__(observables, bounds)
        B0 = np.array(B0, dtype=complex)
        B = np.array(B, dtype=complex)
        if B.ndim == 2:
            B = B[None]
        if B.shape != (self.M, self.dim, self.dim) or B0.shape != (self.dim, self.dim):
            raise ValueError("B0/B shapes do not match the observables")
        for Bk in (B0, *B):
            if not is_hermitian(Bk, tol):
                raise BiorthogonalityViolation("ansatz matrices must be Hermitian")
        Ps = np.concatenate([np.eye(self.dim)[None], self.P])
        Bs = np.concatenate([B0[None], B])
        gram = np.einsum("kij,mji->km", Bs, Ps)
        err = np.max(np.abs(gram - np.eye(self.M + 1)))
        if err > tol:
            raise BiorthogonalityViolation(f"Tr(B_k P_m) deviates from delta_km by {err:.2e}")
        self.B0 = B0
        self.B = B

    def _eval(self, E):
        return self.B0 + np.einsum("m,mij->ij", E, self.B)

    def _grad(self, E):
        return self.B.copy()


def linear_ansatz(B0, B, observables, bounds=None):
    return LinearAnsatz(B0, B, observables, bounds)


def bloch_linear_ansatz(paulis="xz", bounds=None):
    """Linear qubit ansatz ``(I + sum_j E_j sigma_j) / 2`` over a subset of Pauli matrices.

    Pass ``bounds=(-inf, inf)`` for interaction-picture averages, which are not
    confined to the Bloch ball.
    """
    table = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}
    P = np.array([table[c] for c in paulis])
    if bounds is not None:
        lo, hi = bounds
        bounds = (np.broadcast_to(lo, len(P)), np.broadcast_to(hi, len(P)))
    return LinearAnsatz(np.eye(2) / 2, P / 2, P, bounds)


# ---------------------------------------------------------------------------
# Two-level family with one relevant observable sigma_z


def _zero(E):
    return 0.0


@dataclass
class TwoLevelAnsatz(Ansatz):
    """``(I + E sz + f(E) sx + g(E) sy) / 2`` for the single observable ``sz``.

    ``f``, ``g`` and their derivatives ``df``, ``dg`` are scalar callables.
    ``sqrt_coordinate`` flags families (like ``g = alpha sqrt(E)``) whose
    natural ODE coordinate is ``y = sqrt(E)``.
    """

    f: Callable[[float], float] = _zero
    df: Callable[[float], float] = _zero
    g: Callable[[float], float] = _zero
    dg: Callable[[float], float] = _zero
    lo: float = -0.9
    hi: float = 0.9
    sqrt_coordinate: bool = False
    name: str = "two_level"
    observables: RelevantObservables = field(init=False)
    bounds: tuple = field(init=False)

    def __post_init__(self):
        Ansatz.__init__(self, SIGMA_Z, ([self.lo], [self.hi]))

    def bloch(self, E):
        return np.array([self.f(E), self.g(E), E])

    def check_domain(self, E):
        E = super().check_domain(E)
        r = self.bloch(E[0])
        if r @ r > 1 + 1e-12:
            raise PositivityViolation(f"Bloch vector {r} at E = {E[0]} leaves the unit ball")
        return E

    def _eval(self, E):
        x, y, z = self.bloch(E[0])
        return 0.5 * (np.eye(2) + z * SIGMA_Z + x * SIGMA_X + y * SIGMA_Y)

    def _grad(self, E):
        e = E[0]
        return (0.5 * (SIGMA_Z + self.df(e) * SIGMA_X + self.dg(e) * SIGMA_Y))[None]


def two_level_ansatz(f=None, df=None, g=None, dg=None, lo=-0.9, hi=0.9, sqrt_coordinate=False):
    return TwoLevelAnsatz(f or _zero, df or _zero, g or _zero, dg or _zero, lo, hi, sqrt_coordinate)


def sqrt_two_level_ansatz(alpha, f=None, df=None, lo=1e-12, hi=None):
    """The family with ``g(E) = alpha sqrt(E)``, valid for ``E > 0``.

    The default upper bound keeps ``E**2 + alpha**2 E + f(E)**2 <= 1`` with a
    small margin.
    """
    alpha = float(alpha)
    f = f or _zero
    df = df or _zero
    if hi is None:
        es = np.linspace(0, 1, 20001)
        ok = es**2 + alpha**2 * es + np.array([f(e) for e in es]) ** 2 <= 0.98
        hi = float(es[ok][-1])
    return TwoLevelAnsatz(
        f,
        df,
        lambda E: alpha * np.sqrt(E),
        lambda E: alpha / (2 * np.sqrt(E)),
        lo,
        hi,
        sqrt_coordinate=True,
        name="sqrt_two_level",
    )


# ---------------------------------------------------------------------------


def numeric_grad(ansatz, E, h=None):
    """Central-difference gradient ``(M, d, d)``; default step ``1e-5 (1 + |E_m|)``."""
    E = ansatz.check_domain(E)
    out = []
    for m in range(ansatz.M):
        step = 1e-5 * (1 + abs(E[m])) if h is None else h
        e = np.zeros(ansatz.M)
        e[m] = step
        out.append((ansatz.eval(E + e) - ansatz.eval(E - e)) / (2 * step))
    return np.array(out)


def consistency_residuals(ansatz, E, grad=None):
    """``(max |Tr P rho - E|, max |Tr P_m grad_n - delta|, max |Tr grad_n|, |Tr rho - 1|)``."""
    E = ansatz._coerce(E)
    rho, G = ansatz.eval_and_grad(E) if grad is None else (ansatz.eval(E), grad)
    r_cons = np.max(np.abs(ansatz.averages(rho) - E))
    dcons = np.einsum("mij,nji->mn", ansatz.P, G).real
    r_dcons = np.max(np.abs(dcons - np.eye(ansatz.M)))
    r_trg = np.max(np.abs(np.trace(G, axis1=1, axis2=2)))
    return r_cons, r_dcons, r_trg, abs(np.trace(rho) - 1)
