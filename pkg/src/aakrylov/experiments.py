"""Batch experiment drivers: seeded Monte Carlo initial-guess studies, angle
and grid sweeps over initial conditions, a dual-initial-guess grid search,
regularization sweeps, and backward-error traces.

Randomness is counter based: trial i draws from a fresh generator seeded by
``(master_seed, i)``, so results are independent of execution order and of
how trials are chunked across workers. Aggregation sorts rows by trial index
before computing statistics, and identical configurations reproduce
byte-identical results.

Large sweeps of the window-one scheme run in a vectorized lockstep driver
(one array axis per trial) that mirrors the reference solver step for step,
using the closed-form window-one weight; tests cross-validate it against the
reference solver on sampled trials.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analysis, linalg
from .problems import LinearProblem, Problem
from .solver import AAConfig, STALL_REL_TOL, solve

_ERROR_FLOOR_BASE = 1e-13  # times (1 + ||x*||); matches analysis.estimate_rho
_MIN_USABLE = 10
_DIVERGE_LIMIT = 1e100


@dataclass
class SweepResult:
    kind: str
    columns: tuple[str, ...]
    rows: list[tuple]
    stats: dict[str, float]
    histogram: np.ndarray | None = None
    curves: dict | None = None


_BATCH_FIELDS = ("rho", "finite", "diverged", "beta_min", "beta_max", "k_used", "err_final")


@dataclass
class _BatchOut:
    rho: np.ndarray
    finite: np.ndarray
    diverged: np.ndarray
    beta_min: np.ndarray
    beta_max: np.ndarray
    k_used: np.ndarray
    err_final: np.ndarray


def batch_aa1(problem: Problem, x0, x1=None, *, max_iter: int = 150, fp: bool = False,
              reg_lambda: float | None = None, reg_eps: float | None = None) -> _BatchOut:
    """Lockstep window-one acceleration (or plain iteration) over a trial axis.

    ``x0`` has shape (T, n); when ``x1`` is None the runs start from a single
    guess with ``x_1 = q(x_0)``, otherwise from the guess pairs. Reports the
    tail root-averaged error as the convergence factor per trial, a finite
    flag for runs that hit the error floor in under ten usable iterations,
    a divergence flag, and the range of emitted weights.
    """
    if problem.x_star is None:
        raise ValueError("batch runs need a problem with a known fixed point")
    if max_iter < _MIN_USABLE + 1:
        raise ValueError(f"max_iter must be at least {_MIN_USABLE + 1}")
    x_star = np.asarray(problem.x_star, dtype=float)
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    T = X0.shape[0]
    floor = _ERROR_FLOOR_BASE * (1.0 + float(np.linalg.norm(x_star)))

    with np.errstate(all="ignore"):
        q_prev = problem.q(X0)
        r_prev = X0 - q_prev
        if x1 is None:
            X1 = q_prev.copy()
        else:
            X1 = np.atleast_2d(np.asarray(x1, dtype=float))
            if X1.shape != X0.shape:
                raise ValueError("x1 must match the shape of x0")
        q_cur = problem.q(X1)
        r_cur = X1 - q_cur
        x_cur = X1

        active = (
            np.isfinite(X0).all(axis=1)
            & np.isfinite(r_prev).all(axis=1)
            & np.isfinite(r_cur).all(axis=1)
            & np.isfinite(x_cur).all(axis=1)
        )
        rho = np.zeros(T)
        usable = np.zeros(T, dtype=int)
        k_used = np.zeros(T, dtype=int)
        beta_min = np.full(T, np.inf)
        beta_max = np.full(T, -np.inf)

        err = np.linalg.norm(x_cur - x_star, axis=1)
        upd = active & (err > floor)
        rho[upd] = err[upd]
        usable += upd
        k_used[upd] = 1

        stall2 = STALL_REL_TOL * STALL_REL_TOL
        for k in range(1, max_iter):
            w = r_cur - r_prev
            d = np.einsum("ij,ij->i", w, w)
            rn2 = np.einsum("ij,ij->i", r_cur, r_cur)
            stall = d <= stall2 * rn2
            if fp:
                beta = np.zeros(T)
            else:
                lam = 0.0
                if reg_lambda is not None:
                    lam = reg_lambda
                elif reg_eps is not None:
                    lam = reg_eps * d
                den = d + lam
                num = np.einsum("ij,ij->i", r_cur, w)
                beta = np.where(stall | (den <= 0.0), 0.0, -num / np.where(den > 0.0, den, 1.0))
            x_next = (1.0 + beta)[:, None] * q_cur - beta[:, None] * q_prev
            q_next = problem.q(x_next)
            r_next = x_next - q_next

            ok = (
                np.isfinite(x_next).all(axis=1)
                & np.isfinite(r_next).all(axis=1)
                & (np.einsum("ij,ij->i", x_next, x_next) < _DIVERGE_LIMIT**2)
            )
            adv = active & ok
            active = adv  # trials that blew up freeze at their last finite state

            if not fp:
                b_eff = np.where(adv, beta, np.nan)
                beta_min = np.fmin(beta_min, b_eff)
                beta_max = np.fmax(beta_max, b_eff)

            sel = adv[:, None]
            q_prev = np.where(sel, q_cur, q_prev)
            r_prev = np.where(sel, r_cur, r_prev)
            q_cur = np.where(sel, q_next, q_cur)
            r_cur = np.where(sel, r_next, r_cur)
            x_cur = np.where(sel, x_next, x_cur)

            err = np.linalg.norm(x_cur - x_star, axis=1)
            upd = active & (err > floor)
            rho[upd] = err[upd] ** (1.0 / (k + 1))
            usable += upd
            k_used[upd] = k + 1

    diverged = ~active
    finite = active & (usable < _MIN_USABLE)
    rho[finite] = 0.0
    rho[diverged] = np.nan
    beta_min[~np.isfinite(beta_min)] = np.nan
    beta_max[~np.isfinite(beta_max)] = np.nan
    err[diverged] = np.nan
    return _BatchOut(rho, finite, diverged, beta_min, beta_max, k_used, err)


def _rho_stats(rho: np.ndarray, finite: np.ndarray, diverged: np.ndarray) -> dict[str, float]:
    ok = ~diverged
    vals = rho[ok]
    return {
        "rho_mean": float(np.mean(vals)) if vals.size else float("nan"),
        "rho_max": float(np.max(vals)) if vals.size else float("nan"),
        "n_trials": int(rho.size),
        "n_diverged": int(np.count_nonzero(diverged)),
        "n_finite": int(np.count_nonzero(finite)),
    }


def _histogram(rho: np.ndarray, diverged: np.ndarray) -> np.ndarray:
    vals = rho[~diverged]
    return np.histogram(vals, bins=100, range=(0.0, 1.0))[0]


def draw_x0(seed: int, trial: int, n: int, box: tuple[float, float]) -> np.ndarray:
    """Counter-based per-trial draw: uniform over the box, independent of order."""
    rng = np.random.default_rng([int(seed), int(trial)])
    return rng.uniform(box[0], box[1], size=n)


def _mc_chunk(problem, x0s, m, max_iter):
    if m == 1:
        aa = batch_aa1(problem, x0s, max_iter=max_iter)
    elif m == 0:
        aa = batch_aa1(problem, x0s, max_iter=max_iter, fp=True)
    else:
        aa = _slow_chunk(problem, x0s, m, max_iter)
    fp_out = batch_aa1(problem, x0s, max_iter=max_iter, fp=True)
    return aa, fp_out


def _slow_chunk(problem, x0s, m, max_iter) -> _BatchOut:
    T = x0s.shape[0]
    out = _BatchOut(
        np.zeros(T), np.zeros(T, bool), np.zeros(T, bool),
        np.full(T, np.nan), np.full(T, np.nan), np.zeros(T, int), np.full(T, np.nan),
    )
    config = AAConfig(m=m, max_iter=max_iter, tol_rel=1e-300)
    for t in range(T):
        trace = solve(problem, x0s[t], config)
        if trace.reason == "nonfinite":
            out.diverged[t] = True
            out.rho[t] = np.nan
            continue
        est = analysis.estimate_rho(trace, problem.x_star)
        out.rho[t] = est.rho_hat
        out.finite[t] = est.finite
        out.k_used[t] = est.k_used
        out.err_final[t] = float(np.linalg.norm(trace.final_x - problem.x_star))
        betas = np.concatenate([r.beta for r in trace.records if r.beta.size]) if any(
            r.beta.size for r in trace.records) else np.array([np.nan])
        out.beta_min[t] = np.nanmin(betas)
        out.beta_max[t] = np.nanmax(betas)
    return out


def run_monte_carlo(problem: Problem, trials: int, seed: int, box=(-1.0, 1.0), m: int = 1,
                    max_iter: int = 150, jobs: int = 1, chunk_size: int | None = None,
                    _chunk_order=None) -> SweepResult:
    """Accelerated and plain runs from ``trials`` random starts in the box.

    Each row carries the trial index, the start, the accelerated convergence
    factor (with finite/diverged flags and the weight range), and the plain
    fixed-point factor for comparison.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    n = problem.n if hasattr(problem, "n") else len(problem.x_star)
    x0s = np.stack([draw_x0(seed, t, n, box) for t in range(trials)])
    chunk = chunk_size or max(1, trials)
    bounds = [(lo, min(lo + chunk, trials)) for lo in range(0, trials, chunk)]
    order = list(range(len(bounds))) if _chunk_order is None else list(_chunk_order)
    results: list = [None] * len(bounds)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                idx: pool.submit(_mc_chunk, problem, x0s[bounds[idx][0]:bounds[idx][1]], m, max_iter)
                for idx in order
            }
            for idx, fut in futures.items():
                results[idx] = fut.result()
    else:
        for idx in order:
            lo, hi = bounds[idx]
            results[idx] = _mc_chunk(problem, x0s[lo:hi], m, max_iter)
    aa = _concat_batches([r[0] for r in results])
    fp_out = _concat_batches([r[1] for r in results])
    rows = [
        (
            t, *x0s[t], aa.rho[t], int(aa.finite[t]), int(aa.diverged[t]),
            aa.err_final[t], aa.beta_min[t], aa.beta_max[t], fp_out.rho[t],
        )
        for t in range(trials)
    ]
    cols = ("trial", *[f"x0_{i + 1}" for i in range(n)], "rho_hat", "finite", "diverged",
            "err_final", "beta_min", "beta_max", "rho_fp")
    return SweepResult(
        "monte_carlo", cols, rows, _rho_stats(aa.rho, aa.finite, aa.diverged),
        histogram=_histogram(aa.rho, aa.diverged),
    )


def _concat_batches(parts) -> _BatchOut:
    return _BatchOut(*[np.concatenate([getattr(p, f) for p in parts]) for f in _BATCH_FIELDS])


def run_theta_sweep(problem: Problem, n_angles: int, m: int = 1, max_iter: int = 150) -> SweepResult:
    """Convergence factor against the initial-guess angle on the unit circle."""
    if problem.n != 2:
        raise ValueError("angle sweeps need a two-dimensional problem")
    if n_angles < 1:
        raise ValueError("need at least one angle")
    thetas = 2.0 * np.pi * np.arange(n_angles) / n_angles
    x0s = np.stack((np.cos(thetas), np.sin(thetas)), axis=1)
    if m == 1:
        out = batch_aa1(problem, x0s, max_iter=max_iter)
    elif m == 0:
        out = batch_aa1(problem, x0s, max_iter=max_iter, fp=True)
    else:
        out = _slow_chunk(problem, x0s, m, max_iter)
    rows = [(j, thetas[j], out.rho[j], int(out.finite[j]), int(out.diverged[j]))
            for j in range(n_angles)]
    return SweepResult(
        "theta", ("index", "theta", "rho_hat", "finite", "diverged"), rows,
        _rho_stats(out.rho, out.finite, out.diverged),
        histogram=_histogram(out.rho, out.diverged),
    )


def run_grid_sweep(problem: Problem, nx: int, ny: int, bounds=((-1.0, 1.0), (-1.0, 1.0)),
                   m: int = 1, max_iter: int = 150) -> SweepResult:
    """Convergence factor over a regular grid of initial guesses."""
    if problem.n != 2:
        raise ValueError("grid sweeps need a two-dimensional problem")
    (xlo, xhi), (ylo, yhi) = bounds
    if not (xlo < xhi and ylo < yhi and nx >= 1 and ny >= 1):
        raise ValueError("grid bounds must be ordered and counts positive")
    xs = np.linspace(xlo, xhi, nx)
    ys = np.linspace(ylo, yhi, ny)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    x0s = np.stack((XX.ravel(), YY.ravel()), axis=1)
    if m == 1:
        out = batch_aa1(problem, x0s, max_iter=max_iter)
    else:
        out = _slow_chunk(problem, x0s, m, max_iter)
    rows = []
    for i in range(nx):
        for j in range(ny):
            t = i * ny + j
            rows.append((i, j, xs[i], ys[j], out.rho[t], int(out.finite[t]),
                         int(out.diverged[t]), out.err_final[t]))
    return SweepResult(
        "grid", ("i", "j", "x0_1", "x0_2", "rho_hat", "finite", "diverged", "err_final"), rows,
        _rho_stats(out.rho, out.finite, out.diverged),
        histogram=_histogram(out.rho, out.diverged),
    )


def _dual_chunk(problem, x0s, x1s, max_iter):
    return batch_aa1(problem, x0s, x1s, max_iter=max_iter)


def run_dual_guess_search(problem: Problem, n_theta1: int = 50, n_theta2: int = 50,
                          n_alpha: int = 50, alpha_max: float = 10.0, max_iter: int = 150,
                          jobs: int = 1) -> SweepResult:
    """Grid search over paired initial guesses for the window-one scheme.

    ``x0 = (cos t1, sin t1)`` and ``x1 = a (cos t2, sin t2)`` with the angles
    on uniform grids over [0, 2 pi) and ``a`` on ``alpha_max * k / n_alpha``
    for k = 1..n_alpha.
    """
    if problem.n != 2:
        raise ValueError("the dual-guess search needs a two-dimensional problem")
    t1 = 2.0 * np.pi * np.arange(n_theta1) / n_theta1
    t2 = 2.0 * np.pi * np.arange(n_theta2) / n_theta2
    al = alpha_max * np.arange(1, n_alpha + 1) / n_alpha
    T1, T2, AL = np.meshgrid(t1, t2, al, indexing="ij")
    t1f, t2f, alf = T1.ravel(), T2.ravel(), AL.ravel()
    x0s = np.stack((np.cos(t1f), np.sin(t1f)), axis=1)
    x1s = alf[:, None] * np.stack((np.cos(t2f), np.sin(t2f)), axis=1)
    total = t1f.size
    if jobs > 1:
        chunk = -(-total // jobs)
        parts = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [
                pool.submit(_dual_chunk, problem, x0s[lo:lo + chunk], x1s[lo:lo + chunk], max_iter)
                for lo in range(0, total, chunk)
            ]
            parts = [f.result() for f in futs]
        out = _concat_batches(parts)
    else:
        out = batch_aa1(problem, x0s, x1s, max_iter=max_iter)
    rows = [(t, t1f[t], t2f[t], alf[t], out.rho[t], int(out.finite[t]), int(out.diverged[t]))
            for t in range(total)]
    return SweepResult(
        "dual_guess", ("index", "theta1", "theta2", "alpha", "rho_hat", "finite", "diverged"),
        rows, _rho_stats(out.rho, out.finite, out.diverged),
        histogram=_histogram(out.rho, out.diverged),
    )


def run_lambda_sweep(problem: LinearProblem, lambdas, x0, relative: bool = False,
                     max_iter: int = 500, tol_rel: float = 1e-15) -> SweepResult:
    """Window-one runs with Tikhonov-regularized weight solves, one per parameter.

    ``relative=True`` scales the parameter per step by ``max(diag(R_k.T R_k))``
    instead of using it verbatim. Also records the error curve of each run.
    """
    lambdas = [float(v) for v in lambdas]
    if any(not v > 0 for v in lambdas):
        raise ValueError("regularization parameters must be positive")
    if problem.x_star is None:
        raise ValueError("the sweep needs a problem with a known fixed point")
    rows = []
    curves: dict[float, np.ndarray] = {}
    for i, lam in enumerate(lambdas):
        config = AAConfig(
            m=1, max_iter=max_iter, tol_rel=tol_rel, ls_strategy="regularized",
            reg_lambda=None if relative else lam, reg_eps=lam if relative else None,
        )
        trace = solve(problem, x0, config)
        est = analysis.estimate_rho(trace, problem.x_star)
        errs = np.array([
            (rec.k, float(np.linalg.norm(rec.x - problem.x_star))) for rec in trace.records
        ])
        curves[lam] = errs
        rows.append((i, lam, est.rho_hat, int(est.finite), trace.k_final, errs[-1, 1]))
    rhos = np.array([r[2] for r in rows])
    stats = {
        "rho_mean": float(np.mean(rhos)),
        "rho_max": float(np.max(rhos)),
        "n_trials": len(rows),
        "n_diverged": 0,
        "n_finite": int(sum(r[3] for r in rows)),
    }
    return SweepResult(
        "lambda", ("index", "lambda", "rho_hat", "finite", "k_final", "final_error"),
        rows, stats, curves=curves,
    )


def run_nrbe_trace(problem: LinearProblem, x0, max_iter: int = 200,
                   tol_rel: float = 1e-14) -> SweepResult:
    """Backward errors along a window-one run on a linear problem.

    Per iteration: the normwise relative backward error of the linear system
    ``(I - M) x = b`` at the current iterate, and of the weight least-squares
    solve actually performed at that step (absent where no weights were
    computed or the difference matrix vanished).
    """
    if not isinstance(problem, LinearProblem):
        raise ValueError("backward-error traces apply to linear problems")
    trace = solve(problem, x0, AAConfig(m=1, max_iter=max_iter, tol_rel=tol_rel))
    A = problem.A
    rows = []
    recs = trace.records
    for idx, rec in enumerate(recs):
        system = analysis.nrbe(A, problem.b, rec.x)
        ls_val = None
        if rec.beta.size:
            m_eff = rec.beta.size
            R = np.stack([rec.r - recs[idx - i].r for i in range(1, m_eff + 1)], axis=1)
            G = R.T @ R
            g = R.T @ rec.r
            gn = float(np.linalg.norm(g))
            Gn = linalg.two_norm(G)
            den = gn + Gn * float(np.linalg.norm(rec.beta))
            if den > 0.0:
                ls_val = float(np.linalg.norm(G @ rec.beta + g)) / den
        rows.append((rec.k, system, ls_val))
    finals = [r[1] for r in rows]
    stats = {
        "system_nrbe_final": finals[-1],
        "system_nrbe_max": max(finals),
        "ls_nrbe_max": max((r[2] for r in rows if r[2] is not None), default=float("nan")),
        "n_trials": len(rows),
    }
    return SweepResult("nrbe", ("k", "nrbe_system", "nrbe_ls"), rows, stats)
