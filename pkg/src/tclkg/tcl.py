"""Time-local coefficients for ``d/dt (P rho) = K P rho + I Q rho(t0)``.

Exact coefficients come from the propagator and the oblique restricted
inverse of ``P U P``; perturbative ones from signed sums over integer
compositions of products of the ``M`` terms built from iterated integrals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .io import write_csv
from .linalg import SingularOnRange, devectorize, restricted_inverse, vectorize
from .propagator import PropagatorGrid, transport


@dataclass(frozen=True)
class TCLCoefficients:
    """``K(t)``, ``I(t)`` on ``times``; ``order`` is ``"exact"`` or the truncation order.

    For perturbative results ``K_terms[n]``/``I_terms[n]`` hold the individual
    ``K_n``, ``I_n`` (index 0 is zero) and ``lam`` is the coupling used in the sums.
    """

    times: np.ndarray
    K: np.ndarray
    I: np.ndarray
    order: str | int
    lam: float
    K_terms: np.ndarray | None = None
    I_terms: np.ndarray | None = None
    condition: np.ndarray | None = None

    def to_csv(self, path, which="K"):
        mats = self.K if which == "K" else self.I
        D = mats.shape[1]
        header = ["t"]
        for r in range(D):
            for c in range(D):
                header += [f"re_{r}_{c}", f"im_{r}_{c}"]
        header.append("order")
        rows = []
        for t, S in zip(self.times, mats):
            vals = np.stack([S.real, S.imag], axis=-1).ravel()
            rows.append([t, *vals, str(self.order)])
        return write_csv(path, header, rows)


def _prop_for(L, lam, family, grid, k_max=0, **kw):
    if isinstance(grid, PropagatorGrid):
        return grid
    grid = np.asarray(grid, dtype=float)
    return transport(L, lam, grid[0], grid[-1], k_max=k_max, grid=grid, **kw)


def exact_coefficients(L, lam, family, grid, robertson=False, max_condition=1e8, **kw):
    """``K = (P' U P + P U' P)(P U P)^(-1)``, ``I = P' U Q + P U' Q - K P U Q``.

    ``grid`` is either a time array (propagated here) or a
    :class:`PropagatorGrid`. With ``robertson=True`` the ``P'`` terms are dropped.
    Raises :class:`SingularOnRange` carrying the first failing time.
    """
    prop = _prop_for(L, lam, family, grid, **kw)
    n, D = len(prop.times), prop.U.shape[1]
    eye = np.eye(D)
    K = np.empty((n, D, D), dtype=complex)
    I = np.empty((n, D, D), dtype=complex)
    cond = np.empty(n)
    for i, t in enumerate(prop.times):
        P = family(t)
        Q = eye - P
        U = prop.U[i]
        Ud = prop.lam * prop.L_nodes[i] @ U
        A = P @ U @ P
        try:
            B = restricted_inverse(A, P, max_condition=max_condition)
        except SingularOnRange as exc:
            raise SingularOnRange(f"time-local form breaks down at t = {t}: {exc}", exc.smallest, exc.condition, t) from exc
        s = np.linalg.svd(A, compute_uv=False)
        cond[i] = np.linalg.cond(B @ A + Q) if s[0] else np.inf
        num_P = P @ Ud @ P
        num_Q = P @ Ud @ Q
        if not robertson:
            Pd = family.deriv(t)
            num_P = num_P + Pd @ U @ P
            num_Q = num_Q + Pd @ U @ Q
        K[i] = num_P @ B
        I[i] = num_Q - K[i] @ P @ U @ Q
    return TCLCoefficients(prop.times, K, I, "exact", prop.lam, condition=cond)


@lru_cache(maxsize=None)
def compositions(n):
    """All compositions of ``n`` as ``(sign, parts)`` with ``sign = (-1)**(len(parts)-1)``.

    Ordered by number of parts, then lexicographically.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for q in range(n):
        group = []
        for cuts in combinations(range(1, n), q):
            edges = (0, *cuts, n)
            group.append(tuple(b - a for a, b in zip(edges, edges[1:])))
        for parts in sorted(group):
            out.append(((-1) ** q, parts))
    return tuple(out)


@dataclass(frozen=True)
class MTerms:
    """``M_k``, checked ``M_k``, tilde ``M_k`` and checked-tilde ``M_k`` for ``k = 1..k_max`` at one time.

    Arrays are indexed by ``k``; index 0 is unused (zero).
    """

    t: float
    M: np.ndarray
    Mc: np.ndarray
    Mt: np.ndarray
    Mct: np.ndarray

    @property
    def k_max(self):
        return self.M.shape[0] - 1


def m_terms(family, integrals, t, k_max=None, robertson=True):
    """Build the four M-term families at time ``t`` from iterated integrals.

    ``integrals`` is a :class:`PropagatorGrid` holding ``G_k``. The checked terms
    are ``P' G_k P + P L(t) G_{k-1} P``; with ``robertson=True`` (the default,
    valid whenever ``P'(t) rho(t) = 0``) the ``P'`` part is omitted.
    """
    k_max = integrals.k_max if k_max is None else k_max
    D = integrals.U.shape[1]
    P = family(t)
    Q = np.eye(D) - P
    Lt = integrals.generator(t)
    Pd = None if robertson else family.deriv(t)
    shape = (k_max + 1, D, D)
    M, Mc, Mt, Mct = (np.zeros(shape, dtype=complex) for _ in range(4))
    G_prev = integrals.G_at(0, t)
    for k in range(1, k_max + 1):
        Gk = integrals.G_at(k, t)
        PG = P @ Gk
        M[k] = PG @ P
        Mt[k] = PG @ Q
        PLG = P @ Lt @ G_prev
        Mc[k] = PLG @ P
        Mct[k] = PLG @ Q
        if Pd is not None:
            Mc[k] += Pd @ Gk @ P
            Mct[k] += Pd @ Gk @ Q
        G_prev = Gk
    return MTerms(float(t), M, Mc, Mt, Mct)


def _chain(mats):
    out = mats[0]
    for m in mats[1:]:
        out = out @ m
    return out


def perturbative_K_term(n, mt):
    """``K_n = sum over compositions (k0..kq) of n of (-1)^q Mc_k0 M_k1 ... M_kq``."""
    return sum(sign * _chain([mt.Mc[parts[0]], *(mt.M[k] for k in parts[1:])]) for sign, parts in compositions(n))


def perturbative_I_term(n, mt):
    """``I_n = Mct_n + sum_{q>=1} (-1)^q Mc_k0 M_k1 ... M_k(q-1) Mt_kq``."""
    total = mt.Mct[n].copy()
    for sign, parts in compositions(n):
        if len(parts) == 1:
            continue
        mats = [mt.Mc[parts[0]], *(mt.M[k] for k in parts[1:-1]), mt.Mt[parts[-1]]]
        total = total + sign * _chain(mats)
    return total


def perturbative_coefficients(L, lam, family, grid, n_max, robertson=True, integrals=None, **kw):
    """Truncated series ``sum_{n<=n_max} lam^n K_n`` (and the same for ``I``) on a grid."""
    if integrals is None:
        g = np.asarray(grid, dtype=float)
        integrals = transport(L, lam, g[0], g[-1], k_max=n_max, grid=g, **kw)
    times = integrals.times
    n = len(times)
    D = integrals.U.shape[1]
    Kt = np.zeros((n_max + 1, n, D, D), dtype=complex)
    It = np.zeros_like(Kt)
    for i, t in enumerate(times):
        mt = m_terms(family, integrals, t, n_max, robertson)
        for order in range(1, n_max + 1):
            Kt[order, i] = perturbative_K_term(order, mt)
            It[order, i] = perturbative_I_term(order, mt)
    powers = lam ** np.arange(n_max + 1)
    K = np.einsum("n,nijk->ijk", powers, Kt)
    I = np.einsum("n,nijk->ijk", powers, It)
    return TCLCoefficients(times, K, I, n_max, lam, Kt, It)


def perturbative_K(n_max, mterms, lam):
    """``sum_{n<=n_max} lam^n K_n`` for a list of :class:`MTerms` (one per time)."""
    return np.array([sum(lam**n * perturbative_K_term(n, mt) for n in range(1, n_max + 1)) for mt in mterms])


def perturbative_I(n_max, mterms, lam):
    return np.array([sum(lam**n * perturbative_I_term(n, mt) for n in range(1, n_max + 1)) for mt in mterms])


def expansion_text(n, which="K"):
    """Human-readable signed term list, e.g. ``+Mc3 -Mc1 M2 -Mc2 M1 +Mc1 M1 M1``."""
    terms = []
    for sign, parts in compositions(n):
        if which == "K":
            names = [f"Mc{parts[0]}", *(f"M{k}" for k in parts[1:])]
        else:
            if len(parts) == 1:
                names = [f"Mct{n}"]
            else:
                names = [f"Mc{parts[0]}", *(f"M{k}" for k in parts[1:-1]), f"Mt{parts[-1]}"]
        terms.append(("+" if sign > 0 else "-") + " ".join(names))
    return terms


# ---------------------------------------------------------------------------
# Diagnostics


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x`` and the fit's R^2."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = np.sum((ly - pred) ** 2)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(r2)


@dataclass
class SeriesFit:
    lams: np.ndarray
    times: np.ndarray
    errors: np.ndarray  # (n_lam, n_t)
    slopes: np.ndarray
    r2: np.ndarray
    n_max: int = 0
    extra: dict = field(default_factory=dict)


def series_vs_exact(L, lam_list, family, grid, n_max, robertson=True, **kw):
    """Fit ``log ||K_exact - sum_{n<=n_max} lam^n K_n||`` against ``log lam`` at each grid time."""
    grid = np.asarray(grid, dtype=float)
    errs = []
    for lam in lam_list:
        integ = transport(L, lam, grid[0], grid[-1], k_max=n_max, grid=grid, **kw)
        ex = exact_coefficients(L, lam, family, integ, robertson=robertson)
        ser = perturbative_coefficients(L, lam, family, grid, n_max, robertson, integrals=integ)
        errs.append(np.linalg.norm(ex.K - ser.K, ord=2, axis=(1, 2)))
    errs = np.array(errs)
    slopes, r2 = [], []
    for j in range(len(grid)):
        if np.all(errs[:, j] > 0):
            s, r = loglog_slope(lam_list, errs[:, j])
        else:
            s, r = np.nan, np.nan
        slopes.append(s)
        r2.append(r)
    return SeriesFit(np.asarray(lam_list), grid, errs, np.array(slopes), np.array(r2), n_max)


def five_point_derivative(f_m2, f_m1, f_p1, f_p2, h):
    return (f_m2 - 8 * f_m1 + 8 * f_p1 - f_p2) / (12 * h)


def time_local_residual(L, lam, family_factory, rho0, sample_times, t0=0.0, h=1e-2, rtol=1e-12, atol=1e-14):
    """Residual of ``d/dt(P rho) - K P rho - I Q rho(t0)`` at ``sample_times``.

    The left side is a five-point central difference on a stencil that is part
    of the propagation grid, so no interpolation enters. ``family_factory``
    maps the propagator grid to a :class:`ProjectorFamily` (for trajectory-
    dependent projectors). Returns ``(max residual, per-time residuals, I-term norms)``.
    """
    sample_times = np.asarray(sample_times, float)
    offsets = np.array([-2, -1, 0, 1, 2]) * h
    pts = np.unique(np.concatenate([[t0], (sample_times[:, None] + offsets).ravel()]))
    if pts[0] < t0:
        raise ValueError("stencil reaches before t0; move sample times later")
    prop = transport(L, lam, t0, pts[-1], grid=pts, rtol=rtol, atol=atol)
    family = family_factory(prop)
    d = np.asarray(rho0).shape[0]
    v0 = vectorize(rho0)
    idx = {t: i for i, t in enumerate(prop.times)}

    def Prho(t):
        return family(t) @ prop.U[idx[t]] @ v0

    sub = exact_coefficients(L, lam, family, _subgrid(prop, [idx[t] for t in sample_times]))
    res, iterm = [], []
    for j, t in enumerate(sample_times):
        st = [t + o for o in offsets]
        st = [pts[np.argmin(np.abs(pts - s))] for s in st]
        lhs = five_point_derivative(Prho(st[0]), Prho(st[1]), Prho(st[3]), Prho(st[4]), h)
        i = idx[st[2]]
        P = family(st[2])
        rho_t = prop.U[i] @ v0
        Q = np.eye(d * d) - P
        I_part = sub.I[j] @ Q @ v0
        rhs = sub.K[j] @ P @ rho_t + I_part
        res.append(np.linalg.norm(devectorize(lhs - rhs, d)))
        iterm.append(np.linalg.norm(I_part))
    return max(res), np.array(res), np.array(iterm)


def _subgrid(prop, indices):
    indices = list(indices)
    return PropagatorGrid(
        prop.generator,
        prop.lam,
        prop.times[indices],
        prop.U[indices],
        prop.G[:, indices],
        prop.L_nodes[indices],
        prop.rtol,
        prop.atol,
    )
