"""Verification layer for the accelerated iteration applied to linear maps.

For ``q(x) = M x + b`` the residuals of the windowed scheme satisfy
``r_k = p_k(M) r_0`` where the polynomials obey an (m + 2)-term recurrence
with ``p_k(1) = 1`` and ``p_k(0) = 0``. This module reconstructs those
polynomials from a trace, checks the identity and its periodic divisibility
by powers of the argument (the memory effect), evaluates the window-one
closed forms that eliminate the acceleration weights (a vector recursion
and a rank-two matrix recursion), checks the per-step residual reduction
bounds driven by the angle between consecutive residuals, and estimates
root-linear convergence factors from traces.

Everything here is a pure function over immutable traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg
from .errors import StallError, VerificationError
from .problems import LinearProblem
from .solver import AAConfig, STALL_REL_TOL, Trace, solve


@dataclass(frozen=True)
class ResidualPolynomial:
    """Dense polynomial ``p(lam) = sum_j coeffs[j] lam**j`` in the monomial basis."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must form a nonempty 1-D array")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, lam):
        return np.polynomial.polynomial.polyval(lam, self.coeffs)

    def at_matrix(self, M: np.ndarray) -> np.ndarray:
        """Evaluate p(M) by Horner's scheme."""
        n = M.shape[0]
        out = self.coeffs[-1] * np.eye(n)
        for c in self.coeffs[-2::-1]:
            out = out @ M + c * np.eye(n)
        return out

    def coeff_scale(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))


def check_update_polynomial(p: ResidualPolynomial, rel: float = 1e-9) -> None:
    """Assert the structural invariants p(1) = 1 and p(0) = 0 of an update polynomial."""
    scale = max(p.coeff_scale(), 1.0)
    if abs(float(p(1.0)) - 1.0) > rel * scale:
        raise VerificationError(f"p(1) = {float(p(1.0)):.17g} differs from 1")
    if abs(float(p(0.0))) > rel * scale:
        raise VerificationError(f"p(0) = {float(p(0.0)):.17g} differs from 0")


def polynomial_recurrence(betas: Sequence[np.ndarray], m: int) -> list[ResidualPolynomial]:
    """Residual update polynomials from the per-step weights of a single-guess run.

    ``betas[k]`` is the weight vector computed at step k (length ``min(k, m)``,
    empty for k = 0). Returns ``[p_0, ..., p_K]`` with ``K = len(betas)``:
    p_0 = 1, p_1 = lam, and

        p_{k+1}(lam) = (1 + sum(beta)) lam p_k(lam) - sum_i beta_i lam p_{k-i}(lam).
    """
    if m < 0:
        raise ValueError("window size must be nonnegative")
    polys = [ResidualPolynomial(np.array([1.0]))]
    if not betas:
        return polys
    for k, beta in enumerate(betas):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        m_eff = min(k, m)
        if beta.size != m_eff:
            raise ValueError(
                f"step {k} carries {beta.size} weights, expected min(k, m) = {m_eff}"
            )
        if k == 0:
            polys.append(ResidualPolynomial(np.array([0.0, 1.0])))
            continue
        combo = (1.0 + float(np.sum(beta))) * _padded(polys[k], k)
        for i in range(1, m_eff + 1):
            combo -= beta[i - 1] * _padded(polys[k - i], k)
        polys.append(ResidualPolynomial(np.concatenate(([0.0], combo))))
    return polys


def _padded(p: ResidualPolynomial, deg: int) -> np.ndarray:
    out = np.zeros(deg + 1)
    out[: p.coeffs.size] = p.coeffs
    return out


def polynomials_from_trace(trace: Trace) -> list[ResidualPolynomial]:
    """Rebuild ``p_0 .. p_K`` from a single-initial-guess trace."""
    if trace.n_seed != 1:
        raise ValueError("polynomial reconstruction needs a single-initial-guess trace")
    K = trace.k_final
    return polynomial_recurrence([rec.beta for rec in trace.records[:K]], trace.config.m)


def verify_polynomial_trace(trace: Trace, problem: LinearProblem) -> float:
    """Max over k of ``||p_k(M) r_0 - r_k|| / ||r_0||`` for a linear trace."""
    if not isinstance(problem, LinearProblem):
        raise ValueError("polynomial verification applies to linear problems")
    polys = polynomials_from_trace(trace)
    r0 = trace.records[0].r
    scale = float(np.linalg.norm(r0))
    if scale == 0.0:
        return 0.0
    worst = 0.0
    for rec, p in zip(trace.records, polys):
        dev = float(np.linalg.norm(p.at_matrix(problem.M) @ r0 - rec.r))
        worst = max(worst, dev / scale)
    return worst


def memory_effect_factor(p: ResidualPolynomial, m: int, k: int) -> ResidualPolynomial:
    """Split off the guaranteed power of the argument from ``p_k``.

    For ``k = s (m + 1) + i`` with ``s >= 0`` and ``1 <= i <= m + 1`` the
    coefficients ``c_0 .. c_s`` must vanish; returns g with
    ``lam**(s+1) g(lam) = p(lam)``.
    """
    if k < 1 or m < 0:
        raise ValueError("need k >= 1 and m >= 0")
    s = (k - 1) // (m + 1)
    tol = 1e-9 * max(p.coeff_scale(), 1.0)
    limit = min(s + 1, p.coeffs.size)
    for j in range(limit):
        if abs(p.coeffs[j]) > tol:
            raise VerificationError(
                f"coefficient {j} of p_{k} is {p.coeffs[j]:.3e}, expected 0 "
                f"(divisibility by lam^{s + 1} fails)"
            )
    rest = p.coeffs[s + 1 :]
    if rest.size == 0:
        rest = np.array([0.0])
    return ResidualPolynomial(rest)


def aa1_residual_recursion(r_k, r_km1, M) -> np.ndarray:
    """Next window-one residual from the previous two, without the weights.

    Uses the skew form ``M (r_{k-1} r_k^T - r_k r_{k-1}^T) w / ||w||^2`` with
    ``w = r_k - r_{k-1}``; falls back to ``M r_k`` when the two residuals
    coincide (within STALL_REL_TOL relative).
    """
    rk = linalg.as_vector(r_k, "r_k")
    rkm1 = linalg.as_vector(r_km1, "r_{k-1}")
    M = linalg.as_matrix(M, "M")
    w = rk - rkm1
    wn = float(np.linalg.norm(w))
    if wn <= STALL_REL_TOL * float(np.linalg.norm(rk)):
        return M @ rk
    S = np.outer(rkm1, rk) - np.outer(rk, rkm1)
    return M @ (S @ w) / (wn * wn)


@dataclass
class RankTwoUpdate:
    """Matrix ``L_k`` with ``r_k = L_k r_0``; numerical rank at most 2 for k >= 2."""

    L: np.ndarray
    k: int


def lk_recursion(M, r0, steps: int) -> list[RankTwoUpdate]:
    """Residual propagator matrices for the window-one scheme.

    ``L_0 = I``, ``L_1 = M``, then a recursion in M and the rank-one matrix
    ``r_0 r_0^T`` that never touches the acceleration weights. Raises
    StallError if two consecutive residuals coincide within the horizon, and
    VerificationError if ``L_k r_0`` drifts from the solver residuals beyond
    ``1e-9 ||r_0||`` or the numerical rank of some ``L_k`` (k >= 2) exceeds 2.
    """
    M = linalg.as_matrix(M, "M")
    r0 = linalg.as_vector(r0, "r0")
    n = M.shape[0]
    if M.shape[1] != n or r0.shape[0] != n:
        raise ValueError("M must be square and match r0")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    A = np.eye(n) - M
    x0 = linalg.solve_square(A, r0)  # so the homogeneous run starts at residual r0
    trace = solve(
        LinearProblem(M, np.zeros(n)),
        x0,
        AAConfig(m=1, max_iter=steps, tol_rel=1e-300),
    )
    if trace.k_final < steps:
        raise VerificationError(f"reference run stopped early at k = {trace.k_final}")
    R0 = np.outer(r0, r0)
    out = [RankTwoUpdate(np.eye(n), 0), RankTwoUpdate(M.copy(), 1)]
    for k in range(1, steps):
        Lk, Lkm1 = out[k].L, out[k - 1].L
        diff = Lk - Lkm1
        wn2 = float(np.linalg.norm(diff @ r0)) ** 2
        if wn2 <= (STALL_REL_TOL * float(np.linalg.norm(out[k].L @ r0))) ** 2:
            raise StallError(f"residuals r_{k} and r_{k - 1} coincide; recursion undefined")
        T = Lk @ R0 @ Lkm1.T
        out.append(RankTwoUpdate(M @ (T.T - T) @ diff / wn2, k + 1))
    scale = float(np.linalg.norm(r0))
    for upd in out:
        dev = float(np.linalg.norm(upd.L @ r0 - trace.records[upd.k].r))
        if dev > 1e-9 * scale:
            raise VerificationError(
                f"L_{upd.k} r_0 deviates from the solver residual by {dev:.3e}"
            )
        if upd.k >= 2 and n > 2:
            svals = linalg.svdvals(upd.L)
            if svals[-3] > 1e-10 * svals[-1]:
                raise VerificationError(
                    f"L_{upd.k} has numerical rank > 2 (third singular value "
                    f"{svals[-3]:.3e} vs largest {svals[-1]:.3e})"
                )
    return out


def bound_factor(phi: float, y: float) -> float:
    """The factor ``sin^2(phi) / (y^2 - 2 y cos(phi) + 1)`` in [0, 1].

    Governs the per-step residual reduction of the window-one scheme relative
    to the extreme singular values. Indeterminate at (phi, y) = (0, 1), which
    corresponds to two equal consecutive residuals; callers must branch to the
    plain singular-value bounds there.
    """
    phi = float(phi)
    y = float(y)
    if not y > 0.0:
        raise ValueError("y must be positive")
    if not 0.0 <= phi <= np.pi + 1e-12:
        raise ValueError("phi must lie in [0, pi]")
    if abs(phi) < 1e-12 and abs(y - 1.0) < 1e-12:
        raise ValueError("bound factor is indeterminate at (phi, y) = (0, 1)")
    s = np.sin(phi)
    denom = y * y - 2.0 * y * np.cos(phi) + 1.0
    val = float(s * s / denom)
    return min(max(val, 0.0), 1.0)


@dataclass
class BoundsRecord:
    """Per-step reduction bounds: ``lower <= ||r_{k+1}||/||r_k|| <= upper``.

    ``B`` is the bound factor from the (phi_k, y_k) pair, absent in the
    special case of equal consecutive residuals where the plain
    singular-value bounds apply instead.
    """

    k: int
    B: float | None
    lower: float
    upper: float
    actual: float
    special_case: bool
    violation: bool


def bounds_check(trace: Trace, M) -> list[BoundsRecord]:
    """Evaluate the reduction bounds on every step of a window-one linear trace.

    Flags a violation when the realized ratio leaves the bound interval by
    more than 1e-9 relative (plus an absolute guard of 1e-15 for the
    exact-convergence corner).
    """
    if trace.config.m != 1:
        raise ValueError("the reduction bounds apply to window size 1")
    M = linalg.as_matrix(M, "M")
    smin, smax = linalg.singular_values_small(M)
    out: list[BoundsRecord] = []
    recs = trace.records
    for idx in range(1, len(recs) - 1):
        prev, cur, nxt = recs[idx - 1], recs[idx], recs[idx + 1]
        if cur.r_norm == 0.0 or prev.r_norm == 0.0:
            continue
        actual = nxt.r_norm / cur.r_norm
        w = float(np.linalg.norm(cur.r - prev.r))
        special = w <= STALL_REL_TOL * cur.r_norm
        y = cur.r_norm / prev.r_norm
        phi = cur.phi
        if not special and phi is not None and abs(phi) < 1e-12 and abs(y - 1.0) < 1e-12:
            special = True  # indeterminate corner routes to the plain bounds
        if special:
            B = None
            lower, upper = smin, smax
        else:
            B = bound_factor(phi, y)
            root = float(np.sqrt(B))
            lower, upper = smin * root, smax * root
        violation = actual > upper * (1.0 + 1e-9) + 1e-15 or actual < lower * (1.0 - 1e-9) - 1e-15
        out.append(BoundsRecord(cur.k, B, lower, upper, actual, special, violation))
    return out


@dataclass
class ConvergenceEstimate:
    """Estimated root-linear factor; ``finite`` marks runs that hit the
    error floor in under ten usable records (exact convergence)."""

    rho_hat: float
    k_used: int
    method: str
    finite: bool = False


def _usable_errors(trace: Trace, x_star: np.ndarray) -> tuple[list[int], list[float]]:
    floor = 1e-13 * (1.0 + float(np.linalg.norm(x_star)))
    ks, errs = [], []
    for rec in trace.records:
        if rec.k < 1:
            continue
        err = float(np.linalg.norm(rec.x - x_star))
        if err > floor:
            ks.append(rec.k)
            errs.append(err)
    return ks, errs


def estimate_rho(trace: Trace, x_star=None, method: str = "sigma_k_tail") -> ConvergenceEstimate:
    """Root-linear convergence factor of a trace with known fixed point.

    ``sigma_k_tail`` (default) reports ``||x_k - x*||^(1/k)`` at the last
    iteration above the error floor ``1e-13 (1 + ||x*||)``; ``log_slope``
    fits the trailing half of ``log ||x_k - x*||`` instead. Runs that reach
    the floor with fewer than ten usable records count as exact (finite)
    convergence with factor 0.
    """
    if method not in ("sigma_k_tail", "log_slope"):
        raise ValueError("method must be 'sigma_k_tail' or 'log_slope'")
    if x_star is None:
        raise ValueError("estimating the convergence factor requires the fixed point")
    x_star = linalg.as_vector(x_star, "x_star")
    ks, errs = _usable_errors(trace, x_star)
    if len(ks) < 10:
        last = trace.records[-1]
        floor = 1e-13 * (1.0 + float(np.linalg.norm(x_star)))
        if float(np.linalg.norm(last.x - x_star)) <= floor:
            return ConvergenceEstimate(0.0, ks[-1] if ks else 0, method, finite=True)
        raise ValueError(f"only {len(ks)} usable records above the error floor; need 10")
    if method == "sigma_k_tail":
        return ConvergenceEstimate(errs[-1] ** (1.0 / ks[-1]), ks[-1], method)
    half = len(ks) // 2
    kk = np.array(ks[half:], dtype=float)
    ll = np.log(np.array(errs[half:]))
    slope = np.polyfit(kk, ll, 1)[0]
    return ConvergenceEstimate(float(np.exp(slope)), ks[-1], method)


@dataclass
class ScalingCheck:
    """Deviations between runs started from x0 and alpha * x0."""

    beta_dev: float
    poly_coeff_dev: float
    rho_dev: float


def scaling_invariance_check(problem: LinearProblem, x0, alpha: float, steps: int) -> ScalingCheck:
    """Compare window-one runs from ``x0`` and ``alpha x0`` on a homogeneous map.

    For ``b = 0`` the weights and update polynomials are invariant under
    scaling of the initial guess. The coefficient comparison normalizes each
    polynomial by its coefficient scale ``max(1, sum |c_j|)`` (coefficients
    grow with the degree, so raw differences would just mirror that growth).
    The convergence-factor comparison is the looser numerical consequence:
    it fits log-errors over the iteration range usable in both runs, where
    the slopes of exactly proportional error sequences must agree.
    """
    if alpha == 0.0:
        raise ValueError("alpha must be nonzero")
    if not isinstance(problem, LinearProblem) or np.any(problem.b):
        raise ValueError("scaling invariance applies to homogeneous linear maps (b = 0)")
    x0 = linalg.as_vector(x0, "x0")
    config = AAConfig(m=1, max_iter=steps, tol_rel=1e-300)
    t1 = solve(problem, x0, config)
    t2 = solve(problem, alpha * x0, config)
    kmax = min(t1.k_final, t2.k_final)
    beta_dev = 0.0
    for k in range(kmax):
        b1, b2 = t1.records[k].beta, t2.records[k].beta
        if b1.size == b2.size and b1.size:
            beta_dev = max(beta_dev, float(np.max(np.abs(b1 - b2))))
    p1 = polynomials_from_trace(t1)
    p2 = polynomials_from_trace(t2)
    poly_dev = 0.0
    for q1, q2 in zip(p1, p2):
        m = max(q1.coeffs.size, q2.coeffs.size)
        raw = float(np.max(np.abs(_padded(q1, m - 1) - _padded(q2, m - 1))))
        scale = max(1.0, q1.coeff_scale(), q2.coeff_scale())
        poly_dev = max(poly_dev, raw / scale)
    star = problem.x_star if problem.x_star is not None else np.zeros(problem.n)
    rho_dev = _common_window_slope_dev(t1, t2, star)
    return ScalingCheck(beta_dev, poly_dev, rho_dev)


def _common_window_slope_dev(t1: Trace, t2: Trace, x_star: np.ndarray) -> float:
    k1, e1 = _usable_errors(t1, x_star)
    k2, e2 = _usable_errors(t2, x_star)
    common = sorted(set(k1) & set(k2))
    if len(common) < 4:
        return 0.0 if len(common) == 0 else float("nan")
    half = common[len(common) // 2 :]
    m1 = dict(zip(k1, e1))
    m2 = dict(zip(k2, e2))
    kk = np.array(half, dtype=float)
    s1 = np.polyfit(kk, np.log([m1[k] for k in half]), 1)[0]
    s2 = np.polyfit(kk, np.log([m2[k] for k in half]), 1)[0]
    return abs(float(np.exp(s1)) - float(np.exp(s2)))


def nrbe(A, b, x) -> float:
    """Normwise relative backward error ``||b - A x|| / (||b|| + ||A||_2 ||x||)``."""
    A = linalg.as_matrix(A, "A")
    b = linalg.as_vector(b, "b")
    x = linalg.as_vector(x, "x")
    den = float(np.linalg.norm(b)) + linalg.two_norm(A) * float(np.linalg.norm(x))
    if den == 0.0:
        raise ValueError("backward error undefined: zero right-hand side and iterate")
    return float(np.linalg.norm(b - A @ x)) / den


def multi_krylov_polynomials(trace: Trace, problem: LinearProblem) -> dict[int, list[ResidualPolynomial]]:
    """Polynomial table for a run started from a full set of m + 1 guesses.

    Returns ``{s: [p_{s,0}, ..., p_{s,m}]}`` with
    ``r_{s+m} = sum_j p_{s,j}(M) r_j`` for s >= 1, where r_0..r_m are the
    seed residuals; the identity is verified against the trace to
    ``1e-8 ||r_0||`` and degrees are bounded by s.
    """
    m = trace.config.m
    if trace.n_seed != m + 1 or m < 1:
        raise ValueError("needs a trace started from m + 1 general guesses with m >= 1")
    if not isinstance(problem, LinearProblem):
        raise ValueError("the polynomial table applies to linear problems")
    recs = trace.records
    K = trace.k_final
    betas = {rec.k: rec.beta for rec in recs if rec.beta.size == m}

    def base(s: int, j: int) -> ResidualPolynomial:
        return ResidualPolynomial(np.array([1.0 if j == s + m else 0.0]))

    table: dict[int, list[ResidualPolynomial]] = {}
    seed_r = [recs[j].r for j in range(m + 1)]
    scale = float(np.linalg.norm(seed_r[0])) or 1.0
    for s in range(1, K - m + 1):
        k = s + m - 1
        beta = betas.get(k)
        if beta is None:
            raise ValueError(f"trace carries no weight vector of length m at step {k}")
        total = 1.0 + float(np.sum(beta))
        row: list[ResidualPolynomial] = []
        for j in range(m + 1):
            if s == 1:
                coeff = total if j == m else -beta[m - j - 1]
                row.append(ResidualPolynomial(np.array([0.0, coeff])))
                continue
            combo = total * _padded(_lookup(table, base, s - 1, j), s - 1)
            for i in range(1, m + 1):
                combo -= beta[i - 1] * _padded(_lookup(table, base, s - 1 - i, j), s - 1)
            row.append(ResidualPolynomial(np.concatenate(([0.0], combo))))
        table[s] = row
        recon = np.zeros_like(seed_r[0])
        for j in range(m + 1):
            recon = recon + row[j].at_matrix(problem.M) @ seed_r[j]
        dev = float(np.linalg.norm(recon - recs[s + m].r))
        if dev > 1e-8 * scale:
            raise VerificationError(
                f"multi-Krylov reconstruction of r_{s + m} deviates by {dev:.3e}"
            )
    return table


def _lookup(table, base, s: int, j: int) -> ResidualPolynomial:
    return table[s][j] if s >= 1 else base(s, j)
