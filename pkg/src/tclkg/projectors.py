"""Projector families: constant, Argyres-Kelley with a moving reservoir state, and
the generalized Kawasaki-Gunton projector built from an ansatz.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np

from .linalg import apply, devectorize, outer_superop, partial_trace_env, vectorize

FD_STEP_E = 1e-5


@dataclass(frozen=True)
class ProjectorFamily:
    """Time-dependent idempotent superoperator ``P(t)`` with its derivative."""

    dim: int
    eval: Callable[[float], np.ndarray]
    deriv: Callable[[float], np.ndarray]
    kind: str = "constant"

    def __call__(self, t):
        return self.eval(t)

    def Q(self, t):
        return np.eye(self.dim**2) - self.eval(t)


def constant_family(P, kind="constant"):
    P = np.array(P, dtype=complex)
    P.setflags(write=False)
    zero = np.zeros_like(P)
    d = int(round(np.sqrt(P.shape[0])))
    return ProjectorFamily(d, lambda t: P, lambda t: zero, kind)


# ---------------------------------------------------------------------------
# Kawasaki-Gunton


def kg_parametric(ansatz, E, rho_grad=None):
    """``P(E) X = rho_ans(E) Tr X + sum_m (Tr(X P_m) - E_m Tr X) d rho_ans/dE_m``."""
    E = ansatz.check_domain(E)
    rho, G = ansatz.eval_and_grad(E) if rho_grad is None else rho_grad
    d = ansatz.dim
    S = outer_superop(rho - np.einsum("m,mij->ij", E, G), np.eye(d))
    for Gm, Pm in zip(G, ansatz.P):
        S += outer_superop(Gm, Pm)
    return S


def kg_nonlinear(ansatz, rho):
    """The parametric projector at ``E = Tr(P rho)``."""
    return kg_parametric(ansatz, ansatz.averages(rho))


def kg_parametric_derivatives(ansatz, E, step=FD_STEP_E):
    """``d P(E) / d E_m`` by central differences, shape ``(M, d*d, d*d)``."""
    E = ansatz.check_domain(E)
    out = []
    for m in range(ansatz.M):
        e = np.zeros(ansatz.M)
        e[m] = step
        out.append((kg_parametric(ansatz, E + e) - kg_parametric(ansatz, E - e)) / (2 * step))
    return np.array(out)


def kg_time_dependent(ansatz, trajectory, generator=None, lam=None, rho_dot=None, fd_step=1e-6):
    """``P_KG(t) = P(E(t))`` along ``trajectory: t -> rho(t)``.

    ``P'(t) = sum_m dE_m/dt dP/dE_m``. ``dE/dt = Tr(P lam L(t) rho(t))`` when a
    generator and coupling are supplied, ``Tr(P rho_dot(t))`` when ``rho_dot``
    is, and a central difference of the trajectory otherwise.
    """

    def eval_(t):
        return kg_nonlinear(ansatz, trajectory(t))

    def Edot(t):
        if generator is not None:
            rho = trajectory(t)
            return ansatz.averages(lam * apply(generator(t), rho))
        if rho_dot is not None:
            return ansatz.averages(rho_dot(t))
        return (ansatz.averages(trajectory(t + fd_step)) - ansatz.averages(trajectory(t - fd_step))) / (2 * fd_step)

    def deriv(t):
        E = ansatz.averages(trajectory(t))
        return np.einsum("m,mij->ij", Edot(t), kg_parametric_derivatives(ansatz, E))

    return ProjectorFamily(ansatz.dim, eval_, deriv, "kg")


def trajectory_from(prop, rho0):
    """``t -> U(t) rho0`` from a propagator grid."""
    v0 = vectorize(rho0)
    d = np.asarray(rho0).shape[0]
    return lambda t: devectorize(prop.U_at(t) @ v0, d)


# ---------------------------------------------------------------------------
# Argyres-Kelley


def _ak_superop(rho_B, dims):
    dS, dB = dims
    d = dS * dB
    S = np.zeros((d * d, d * d), dtype=complex)
    for i, j in product(range(d), repeat=2):
        # column-major: vec index of unit matrix E_ij is i + j d
        X = np.zeros((d, d), dtype=complex)
        X[i, j] = 1
        S[:, i + j * d] = vectorize(np.kron(partial_trace_env(X, dims), rho_B))
    return S


def argyres_kelley(rho_B, dims, fd_step=1e-6):
    """``P(t) X = Tr_B X (x) rho_B(t)`` on ``C^dS (x) C^dB``.

    ``rho_B`` is a callable (or a fixed matrix); the derivative uses a central
    difference of ``rho_B``, exploiting linearity of ``P`` in ``rho_B``.
    """
    dS, dB = dims
    if not callable(rho_B):
        fixed = np.asarray(rho_B, dtype=complex)
        rho_B = lambda t: fixed
    if np.asarray(rho_B(0.0)).shape != (dB, dB):
        raise ValueError(f"reservoir state must be {dB}x{dB}")

    def deriv(t):
        drho = (np.asarray(rho_B(t + fd_step)) - np.asarray(rho_B(t - fd_step))) / (2 * fd_step)
        return _ak_superop(drho, dims)

    return ProjectorFamily(dS * dB, lambda t: _ak_superop(np.asarray(rho_B(t)), dims), deriv, "argyres_kelley")


# ---------------------------------------------------------------------------


def check_projector_laws(family=None, times=None, ansatz=None, E_samples=None):
    """Max residuals of projector identities.

    For a :class:`ProjectorFamily` sampled at ``times``: idempotency and the
    lag law ``P(t) P(t') = P(t)``. For an ansatz with parameter samples: the
    composition law ``P(E) P(E') = P(E)`` over all ordered pairs (which
    includes idempotency at ``E = E'``).
    """
    report = {"idempotency": 0.0, "lag": 0.0, "composition": 0.0}
    if family is not None:
        Ps = [family(t) for t in times]
        for a in Ps:
            report["idempotency"] = max(report["idempotency"], np.max(np.abs(a @ a - a)))
            for b in Ps:
                report["lag"] = max(report["lag"], np.max(np.abs(a @ b - a)))
    if ansatz is not None:
        Ps = [kg_parametric(ansatz, E) for E in E_samples]
        for a in Ps:
            report["idempotency"] = max(report["idempotency"], np.max(np.abs(a @ a - a)))
            for b in Ps:
                report["composition"] = max(report["composition"], np.max(np.abs(a @ b - a)))
    return report
