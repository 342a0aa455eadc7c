"""Reference GMRES (no restarts) used as the per-step optimality oracle.

Arnoldi with modified Gram-Schmidt and Givens-rotation least squares; the
residual norm after k steps is optimal over ``x0 + K_k(A, r0)``. Sign
convention here is ``r = b - A x`` (the accelerated solver uses
``r = x - q(x) = A x - b``; the norms agree).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg


@dataclass
class GmresTrace:
    """Residual norms ``||r_k||`` for k = 0..K and the final iterate.

    Norms are non-increasing by construction (each step scales the previous
    one by a sine factor of magnitude at most one).
    """

    residual_norms: np.ndarray
    x: np.ndarray
    breakdown: bool

    def norm_at(self, k: int) -> float:
        """Residual norm after k steps; past termination it stays at the final value."""
        return float(self.residual_norms[min(k, len(self.residual_norms) - 1)])


def gmres(A, b, x0=None, max_iter: int | None = None) -> GmresTrace:
    """Minimal-residual solve of ``A x = b`` from ``x0``.

    Terminates at the happy breakdown (the Krylov space became invariant, so
    the solve is exact) or after ``max_iter`` steps, capped at n.
    """
    A = linalg.as_matrix(A, "A")
    b = linalg.as_vector(b, "b")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if b.shape[0] != n:
        raise ValueError("b dimension does not match A")
    x0 = np.zeros(n) if x0 is None else linalg.as_vector(x0, "x0")
    kmax = n if max_iter is None else min(int(max_iter), n)

    r0 = b - A @ x0
    beta0 = float(np.linalg.norm(r0))
    norms = [beta0]
    if beta0 == 0.0 or kmax == 0:
        return GmresTrace(np.array(norms), x0.copy(), breakdown=False)

    scale = float(np.linalg.norm(A))  # Frobenius; breakdown threshold reference
    V = np.zeros((n, kmax + 1))
    V[:, 0] = r0 / beta0
    H = np.zeros((kmax + 1, kmax))
    cs = np.zeros(kmax)
    sn = np.zeros(kmax)
    g = np.zeros(kmax + 1)
    g[0] = beta0

    breakdown = False
    steps = 0
    for j in range(kmax):
        w = A @ V[:, j]
        for i in range(j + 1):
            H[i, j] = float(V[:, i] @ w)
            w -= H[i, j] * V[:, i]
        hval = float(np.linalg.norm(w))
        H[j + 1, j] = hval
        if hval > 1e-14 * scale:
            V[:, j + 1] = w / hval
        else:
            breakdown = True
        # previously accumulated rotations
        for i in range(j):
            tmp = cs[i] * H[i, j] - sn[i] * H[i + 1, j]
            H[i + 1, j] = sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = tmp
        nu = float(np.hypot(H[j, j], H[j + 1, j]))
        if nu == 0.0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            cs[j] = H[j, j] / nu
            sn[j] = -H[j + 1, j] / nu
        H[j, j] = cs[j] * H[j, j] - sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = sn[j] * g[j]
        g[j] = cs[j] * g[j]
        norms.append(abs(g[j + 1]))
        steps = j + 1
        if not np.isfinite(norms[-1]):
            raise FloatingPointError("GMRES produced a non-finite residual norm")
        if breakdown:
            break
    y = np.zeros(steps)
    for i in range(steps - 1, -1, -1):
        y[i] = (g[i] - H[i, i + 1 : steps] @ y[i + 1 : steps]) / H[i, i]
    x = x0 + V[:, :steps] @ y
    return GmresTrace(np.array(norms), x, breakdown)
