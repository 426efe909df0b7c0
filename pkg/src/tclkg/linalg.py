"""Dense matrix and superoperator algebra.

Superoperators are plain ``(d*d, d*d)`` complex arrays acting on column-stacked
(Fortran-order) vectorized matrices, so that ``vec(A X B) = kron(B.T, A) vec(X)``.
Composition is ``@``, addition and scaling are the usual array operations.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

RANK_RTOL = 1e-10


class DimensionError(ValueError):
    """Operand shapes do not match."""


class SingularOnRange(np.linalg.LinAlgError):
    """The operator restricted to the range of the projector is (numerically) singular."""

    def __init__(self, msg, smallest=None, condition=None, t=None):
        super().__init__(msg)
        self.smallest = smallest
        self.condition = condition
        self.t = t


def _as_square(x, name="matrix"):
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {x.shape}")
    return x


def superop_dim(S):
    """Return ``d`` for a ``(d*d, d*d)`` superoperator."""
    S = _as_square(S, "superoperator")
    d = int(round(np.sqrt(S.shape[0])))
    if d * d != S.shape[0]:
        raise DimensionError(f"superoperator size {S.shape[0]} is not a perfect square")
    return d


def vectorize(X):
    X = _as_square(X)
    return X.reshape(-1, order="F")


def devectorize(v, d=None):
    v = np.asarray(v, dtype=complex).ravel()
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if v.size != d * d:
        raise DimensionError(f"vector of length {v.size} cannot be reshaped to {d}x{d}")
    return v.reshape((d, d), order="F")


def identity_superop(d):
    return np.eye(d * d, dtype=complex)


def left_mul(A):
    """Superoperator ``X -> A X``."""
    A = _as_square(A)
    return np.kron(np.eye(A.shape[0]), A)


def right_mul(B):
    """Superoperator ``X -> X B``."""
    B = _as_square(B)
    return np.kron(B.T, np.eye(B.shape[0]))


def sandwich(A, B):
    """Superoperator ``X -> A X B``."""
    A, B = _as_square(A), _as_square(B)
    return np.kron(B.T, A)


def outer_superop(Y, Z):
    """Rank-one superoperator ``X -> Y Tr(Z X)``."""
    return np.outer(vectorize(Y), vectorize(np.asarray(Z).T))


def apply(S, X):
    S, X = _as_square(S, "superoperator"), _as_square(X)
    if S.shape[0] != X.shape[0] ** 2:
        raise DimensionError(f"superoperator of size {S.shape[0]} cannot act on {X.shape} matrix")
    return devectorize(S @ vectorize(X), X.shape[0])


def compose(*ops):
    """Product ``ops[0] @ ops[1] @ ...`` with shape checking."""
    ops = [_as_square(S, "superoperator") for S in ops]
    n = ops[0].shape[0]
    for S in ops[1:]:
        if S.shape[0] != n:
            raise DimensionError(f"cannot compose superoperators of sizes {n} and {S.shape[0]}")
    out = ops[0]
    for S in ops[1:]:
        out = out @ S
    return out


def hs_inner(A, B):
    """Hilbert-Schmidt inner product ``Tr(A^dagger B)``."""
    return np.vdot(np.asarray(A), np.asarray(B))


def dagger(X):
    return np.conjugate(np.swapaxes(X, -1, -2))


def is_hermitian(X, tol=1e-12):
    X = np.asarray(X)
    return bool(np.max(np.abs(X - dagger(X)), initial=0.0) <= tol)


def is_density_matrix(X, tol=1e-9):
    X = np.asarray(X)
    if not is_hermitian(X, tol) or abs(np.trace(X) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh((X + dagger(X)) / 2).min() >= -tol)


def partial_trace_env(X, dims):
    """Trace out the second factor of ``X`` on ``C^dS (x) C^dB``."""
    dS, dB = dims
    X = np.asarray(X)
    if X.shape != (dS * dB, dS * dB):
        raise DimensionError(f"matrix of shape {X.shape} does not match dims {dims}")
    return np.einsum("ajbj->ab", X.reshape(dS, dB, dS, dB))


def range_basis(P, rtol=RANK_RTOL):
    """Orthonormal columns spanning the range of ``P`` (rank from SVD cutoff)."""
    U, s, _ = np.linalg.svd(P)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    r = int(np.sum(s > rtol * s[0]))
    return U[:, :r]


def restricted_inverse(A, P, abs_tol=1e-12, max_condition=1e8):
    """Inverse of ``A`` on ``range(P)``, extended by zero on ``range(I - P)``.

    ``P`` may be oblique. The returned ``B`` satisfies ``B A = P`` and
    ``B (I - P) = (I - P) B = 0`` whenever ``A`` maps ``range(P)`` onto itself
    and vanishes on ``range(I - P)``.
    """
    A, P = _as_square(A, "A"), _as_square(P, "P")
    if A.shape != P.shape:
        raise DimensionError(f"A {A.shape} and P {P.shape} differ in shape")
    n = P.shape[0]
    Q = np.eye(n) - P
    VP = range_basis(P)
    VQ = range_basis(Q)
    r = VP.shape[1]
    if r + VQ.shape[1] != n:
        raise np.linalg.LinAlgError(
            f"range(P) and range(I-P) do not split the space (ranks {r} + {VQ.shape[1]} != {n});"
            " P is not idempotent within tolerance"
        )
    if r == 0:
        return np.zeros_like(A)
    T = np.hstack([VP, VQ])
    Tinv = np.linalg.inv(T)
    block = (Tinv @ A @ T)[:r, :r]
    s = np.linalg.svd(block, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if s[-1] < abs_tol or cond > max_condition:
        raise SingularOnRange(
            f"restricted operator is singular: smallest singular value {s[-1]:.3e},"
            f" condition {cond:.3e}",
            smallest=s[-1],
            condition=cond,
        )
    inner = np.zeros_like(A)
    inner[:r, :r] = np.linalg.inv(block)
    return T @ inner @ Tinv


def expm(S):
    """Matrix exponential (scaling and squaring with Pade approximant)."""
    return sla.expm(np.asarray(S, dtype=complex))


def expm_frechet_block(A, E):
    """Return ``(expm(A), L)`` with ``L`` the Frechet derivative of expm at ``A`` in direction ``E``.

    Uses the block identity ``expm([[A, E], [0, A]]) = [[expm(A), L], [0, expm(A)]]``.
    """
    A, E = np.asarray(A), np.asarray(E)
    n = A.shape[0]
    big = np.zeros((2 * n, 2 * n), dtype=np.result_type(A, E, float))
    big[:n, :n] = A
    big[n:, n:] = A
    big[:n, n:] = E
    F = sla.expm(big)
    return F[:n, :n], F[:n, n:]


# ---------------------------------------------------------------------------
# Operator bases

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |e> = (1, 0), |g> = (0, 1); sigma_+ raises g -> e.
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


def pauli():
    """Return ``(sx, sy, sz, s_plus, s_minus)`` as fresh arrays."""
    return tuple(m.copy() for m in (SIGMA_X, SIGMA_Y, SIGMA_Z, SIGMA_PLUS, SIGMA_MINUS))


def gell_mann_basis(d, normalized=True):
    """Hermitian Hilbert-Schmidt orthogonal basis of ``d x d`` matrices.

    The first element is the identity (``I / sqrt(d)`` when normalized); the remaining ``d**2 - 1`` are the
    generalized Gell-Mann matrices (symmetric, antisymmetric, diagonal), which
    are traceless with ``Tr(g_i g_j) = 2 delta_ij``. With ``normalized=True``
    every element is scaled to unit Hilbert-Schmidt norm.
    """
    if int(d) != d or d < 2:
        raise ValueError(f"basis dimension must be an integer >= 2, got {d}")
    d = int(d)
    mats = [np.eye(d, dtype=complex) * (np.sqrt(2.0 / d) if normalized else 1.0)]
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1
            mats.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k], m[k, j] = -1j, 1j
            mats.append(m)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        mats.append(np.diag(diag * np.sqrt(2.0 / (l * (l + 1)))).astype(complex))
    scale = 1 / np.sqrt(2) if normalized else 1.0
    return [m * scale for m in mats]
