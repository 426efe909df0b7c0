"""Generators ``L(t)`` of the linear equation ``d rho/dt = lam L(t) rho``.

The coupling ``lam`` is never folded into a :class:`GeneratorFunction`; the
propagator and the master-equation code multiply by it explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    dagger,
    expm,
    is_hermitian,
    left_mul,
    right_mul,
    sandwich,
    superop_dim,
)


class ExponentialOverflow(FloatingPointError):
    """``||L0|| * t`` exceeds the configured bound for the interaction picture."""


@dataclass(frozen=True)
class GeneratorFunction:
    """A continuous family ``t -> L(t)`` of superoperators.

    ``eval`` returns the ``(d*d, d*d)`` matrix of ``L(t)``. ``constant`` marks
    time-independent generators so that callers can skip re-evaluation.
    """

    dim: int
    eval: Callable[[float], np.ndarray]
    constant: bool = False
    name: str = ""

    def __call__(self, t):
        return self.eval(t)

    @classmethod
    def from_constant(cls, L, name=""):
        L = np.array(L, dtype=complex)
        L.setflags(write=False)
        return cls(superop_dim(L), lambda t: L, constant=True, name=name)

    @classmethod
    def from_terms(cls, terms, name=""):
        """Sum ``sum_j c_j(t) L_j`` from ``[(c_j, L_j), ...]`` with scalar callables ``c_j``."""
        mats = [np.array(L, dtype=complex) for _, L in terms]
        coefs = [c for c, _ in terms]
        d = superop_dim(mats[0])

        def eval_(t):
            return sum(c(t) * L for c, L in zip(coefs, mats))

        return cls(d, eval_, name=name)


def commutator_generator(H, prefactor=-1j, require_hermitian=True, tol=1e-12):
    """Superoperator ``X -> prefactor * (H X - X H)``.

    The default prefactor gives the von Neumann generator ``-i[H, .]``.
    """
    H = np.asarray(H, dtype=complex)
    if require_hermitian and not is_hermitian(H, tol):
        raise ValueError("commutator_generator expects a Hermitian H")
    return prefactor * (left_mul(H) - right_mul(H))


def gksl_dissipator(A, rate=1.0):
    """``X -> rate * (A X A^+ - {A^+ A, X} / 2)``.

    Negative rates are accepted; they are the formal regime of the dissipative
    Wick rotation and are not physical.
    """
    A = np.asarray(A, dtype=complex)
    AdA = dagger(A) @ A
    return rate * (sandwich(A, dagger(A)) - 0.5 * left_mul(AdA) - 0.5 * right_mul(AdA))


def gksl_generator(H=None, jumps=(), rates=None, dim=None):
    """``-i[H, .] + sum_k rate_k D[A_k]``."""
    if dim is None:
        dim = np.asarray(H if H is not None else jumps[0]).shape[0]
    L = np.zeros((dim * dim, dim * dim), dtype=complex)
    if H is not None:
        L += commutator_generator(H)
    rates = np.ones(len(jumps)) if rates is None else rates
    for A, r in zip(jumps, rates):
        L += gksl_dissipator(A, r)
    return L


def random_gksl(d, rng, n_jumps=2, scale=1.0):
    """Random trace- and Hermiticity-preserving GKSL generator with ``||.|| ~ scale``."""
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = (X + dagger(X)) / 2
    jumps = [(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2 * d) for _ in range(n_jumps)]
    L = gksl_generator(H / np.sqrt(d), jumps)
    return scale * L / np.linalg.norm(L, 2)


def interaction_picture(L0, L1, max_exponent=700.0):
    """``L(t) = exp(-L0 t) L1 exp(L0 t)`` as a :class:`GeneratorFunction`.

    ``max_exponent`` bounds ``||L0||_2 * |t|``; beyond it the dense exponentials
    may overflow and :class:`ExponentialOverflow` is raised.
    """
    L0 = np.array(L0, dtype=complex)
    L1 = np.array(L1, dtype=complex)
    norm0 = np.linalg.norm(L0, 2)
    if norm0 == 0:
        return GeneratorFunction.from_constant(L1, name="interaction")

    def eval_(t):
        if norm0 * abs(t) > max_exponent:
            raise ExponentialOverflow(f"||L0|| t = {norm0 * abs(t):.1f} exceeds {max_exponent}")
        E = expm(L0 * t)
        Einv = expm(-L0 * t)
        return Einv @ L1 @ E

    return GeneratorFunction(superop_dim(L0), eval_, name="interaction")


@dataclass(frozen=True)
class ResonanceFluorescenceModel:
    """Driven two-level atom in a thermal field, rotating frame.

    ``gamma = gamma0 * (2 N + 1)``. With ``high_temperature=True`` both jump
    rates are ``gamma / 2`` and ``gamma`` is taken as given (``gamma0`` then
    only enters through the default ``gamma``).
    """

    omega: float = 1.0
    gamma0: float = 1.0
    n_thermal: float = 0.0
    high_temperature: bool = False
    gamma_override: float | None = None
    gamma: float = field(init=False)

    def __post_init__(self):
        if self.high_temperature and self.gamma_override is not None:
            g = float(self.gamma_override)
        else:
            g = self.gamma0 * (2 * self.n_thermal + 1)
        object.__setattr__(self, "gamma", g)

    @property
    def decay_rates(self):
        """``(rate of sigma_- jumps, rate of sigma_+ jumps)``."""
        if self.high_temperature:
            return self.gamma / 2, self.gamma / 2
        return self.gamma0 * (self.n_thermal + 1), self.gamma0 * self.n_thermal

    @property
    def negative_rates(self):
        return min(self.decay_rates) < 0

    def free_generator(self):
        down, up = self.decay_rates
        return gksl_dissipator(SIGMA_MINUS, down) + gksl_dissipator(SIGMA_PLUS, up)

    def drive_generator(self):
        # (i Omega / 2) [sigma_+ + sigma_-, .]
        return commutator_generator(SIGMA_PLUS + SIGMA_MINUS, prefactor=0.5j * self.omega)

    def rotating_frame_generator(self, lam):
        return self.free_generator() + lam * self.drive_generator()

    def interaction_generator(self, max_exponent=700.0):
        return interaction_picture(self.free_generator(), self.drive_generator(), max_exponent)


def resonance_fluorescence(omega=1.0, gamma0=1.0, n_thermal=0.0, high_temperature=False, gamma=None):
    """Return ``(L0, L1, L(t), model)`` for the resonance-fluorescence example."""
    model = ResonanceFluorescenceModel(omega, gamma0, n_thermal, high_temperature, gamma)
    return model.free_generator(), model.drive_generator(), model.interaction_generator(), model


def check_generator(L, rng, times, n_samples=50):
    """Max trace and Hermiticity violations of ``L(t) X`` over random ``X``."""
    gen = L if isinstance(L, GeneratorFunction) else GeneratorFunction.from_constant(L)
    d = gen.dim
    trace_err = herm_err = 0.0
    for t in times:
        Lt = gen(t)
        for _ in range(n_samples):
            X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            Y = (Lt @ X.reshape(-1, order="F")).reshape(d, d, order="F")
            Yd = (Lt @ dagger(X).reshape(-1, order="F")).reshape(d, d, order="F")
            trace_err = max(trace_err, abs(np.trace(Y)))
            herm_err = max(herm_err, np.max(np.abs(Yd - dagger(Y))))
    return trace_err, herm_err


__all__ = [
    "ExponentialOverflow",
    "GeneratorFunction",
    "ResonanceFluorescenceModel",
    "check_generator",
    "commutator_generator",
    "gksl_dissipator",
    "gksl_generator",
    "interaction_picture",
    "random_gksl",
    "resonance_fluorescence",
]
