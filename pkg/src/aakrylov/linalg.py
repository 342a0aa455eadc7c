"""Dense linear-algebra kernels for small problems.

Everything the solver and analysis layers need: a pivoted-QR least-squares
solve, a minimum-norm (pseudo-inverse) solve, a Tikhonov-regularized solve,
extreme singular values, and a guarded LU solve. All kernels are
deterministic (no randomized pivoting) and pure functions of their inputs.

Accuracy notes: singular values come from the symmetric eigendecomposition
of ``M.T @ M``, which is accurate to ~1e-12 relative for the well separated,
desk-scale matrices used here but loses small singular values once
``cond(M)`` exceeds ~1e7.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from .errors import SingularMatrixError

_EPS = float(np.finfo(float).eps)


class SingularPair(NamedTuple):
    sigma_min: float
    sigma_max: float


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate and return a finite 1-D float array."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def rank_tolerance(n: int, p: int) -> float:
    """Relative cutoff below which a pivoted diagonal entry counts as zero."""
    return max(n, p) * _EPS * 64.0


def qr_least_squares(R, rhs) -> np.ndarray:
    """Minimize ``||R @ beta + rhs||`` by Householder QR with column pivoting.

    Pivoted diagonal entries at or below ``rank_tolerance(n, p) * |R_00|``
    mark numerically dependent columns; those columns get zero weight, so a
    rank-deficient system yields a basic solution. Deterministic: pivoting
    takes the first column of maximal norm.
    """
    A = as_matrix(R, "R").copy()
    t = -as_vector(rhs, "rhs")
    n, p = A.shape
    if t.shape[0] != n:
        raise ValueError(f"rhs length {t.shape[0]} does not match {n} rows")
    perm = np.arange(p)
    kmax = min(n, p)
    diag = np.zeros(kmax)
    for k in range(kmax):
        sub = A[k:, k:]
        norms2 = np.einsum("ij,ij->j", sub, sub)
        j = k + int(np.argmax(norms2))
        if j != k:
            A[:, [k, j]] = A[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]
        x = A[k:, k]
        alpha = float(np.linalg.norm(x))
        if alpha == 0.0:
            continue
        if x[0] > 0.0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha  # no cancellation: signs of v[0] terms agree
        vv = float(v @ v)
        A[k:, k + 1 :] -= np.outer(v, (2.0 / vv) * (v @ A[k:, k + 1 :]))
        t[k:] -= (2.0 * float(v @ t[k:]) / vv) * v
        A[k:, k] = 0.0
        A[k, k] = alpha
        diag[k] = abs(alpha)
    cut = rank_tolerance(n, p) * (diag[0] if kmax else 0.0)
    rank = kmax
    for k in range(kmax):
        if diag[k] <= cut:
            rank = k
            break
    z = np.zeros(p)
    for k in range(rank - 1, -1, -1):
        z[k] = (t[k] - A[k, k + 1 : rank] @ z[k + 1 : rank]) / A[k, k]
    beta = np.zeros(p)
    beta[perm] = z
    return beta


def pseudo_inverse_solve(R, rhs) -> np.ndarray:
    """Minimum-norm least-squares solution of ``R @ x ~ rhs`` (SVD-based)."""
    A = as_matrix(R, "R")
    t = as_vector(rhs, "rhs")
    if t.shape[0] != A.shape[0]:
        raise ValueError(f"rhs length {t.shape[0]} does not match {A.shape[0]} rows")
    x, *_ = np.linalg.lstsq(A, t, rcond=None)
    return x


def regularized_solve(R, rhs, lam: float) -> np.ndarray:
    """Return ``(R.T R + lam I)^{-1} R.T rhs`` via Cholesky; requires lam > 0."""
    if not lam > 0.0:
        raise ValueError("regularization parameter must be positive")
    A = as_matrix(R, "R")
    t = as_vector(rhs, "rhs")
    if t.shape[0] != A.shape[0]:
        raise ValueError(f"rhs length {t.shape[0]} does not match {A.shape[0]} rows")
    p = A.shape[1]
    G = A.T @ A + lam * np.eye(p)
    c = sla.cho_factor(G, lower=True)
    return sla.cho_solve(c, A.T @ t)


def singular_values_all(M) -> np.ndarray:
    """All singular values, ascending, from the eigenvalues of ``M.T @ M``.

    Values below ~sqrt(eps) * sigma_max are at the noise floor of this
    route; use :func:`svdvals` where small singular values must resolve.
    """
    A = as_matrix(M, "M")
    w = np.linalg.eigvalsh(A.T @ A)
    return np.sqrt(np.clip(w, 0.0, None))


def svdvals(M) -> np.ndarray:
    """Singular values, ascending, via the full SVD (resolves tiny values)."""
    A = as_matrix(M, "M")
    return np.linalg.svd(A, compute_uv=False)[::-1]


def singular_values_small(M) -> SingularPair:
    """Extreme singular values of a small dense matrix."""
    s = singular_values_all(M)
    return SingularPair(float(s[0]), float(s[-1]))


def two_norm(M) -> float:
    """Spectral norm (largest singular value)."""
    return singular_values_small(M).sigma_max


def solve_square(A, b) -> np.ndarray:
    """Solve ``A x = b`` by partial-pivot LU with a working-precision guard.

    Raises SingularMatrixError when a pivot is negligible relative to the
    largest pivot, or when the computed residual exceeds
    ``1e-12 * (||A||_2 ||x|| + ||b||)``.
    """
    M = as_matrix(A, "A")
    v = as_vector(b, "b")
    n, p = M.shape
    if n != p:
        raise ValueError(f"A must be square, got shape {M.shape}")
    if v.shape[0] != n:
        raise ValueError(f"b length {v.shape[0]} does not match {n}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M)
    d = np.abs(np.diag(lu))
    dmax = float(np.max(d)) if n else 0.0
    if dmax == 0.0 or float(np.min(d)) <= 64.0 * n * _EPS * dmax:
        raise SingularMatrixError("matrix is singular to working precision")
    x = sla.lu_solve((lu, piv), v)
    res = float(np.linalg.norm(M @ x - v))
    bound = 1e-12 * (np.linalg.norm(M, 2) * float(np.linalg.norm(x)) + float(np.linalg.norm(v)))
    if res > bound:
        raise SingularMatrixError(
            f"solve residual {res:.3e} exceeds working-precision bound {bound:.3e}"
        )
    return x
