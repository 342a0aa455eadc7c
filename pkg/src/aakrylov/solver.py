"""Windowed Anderson acceleration of fixed-point iterations.

The update combines the last ``min(k, m) + 1`` fixed-point images with
least-squares weights chosen to minimize the linearized residual

    x_{k+1} = (1 + sum(beta)) q(x_k) - sum_i beta_i q(x_{k-i}),

where beta solves ``min || r_k + sum_i beta_i (r_k - r_{k-i}) ||`` over the
sliding window. ``m = 0`` reduces to the plain fixed-point iteration, and
the first step from a single initial guess is always ``x_1 = q(x_0)``.
Residual convention throughout: ``r(x) = x - q(x)``.

Two start modes exist: a single initial guess whose window grows from 1 to
``m`` over the first ``m`` steps (``solve``), and a full set of ``m + 1``
initial guesses with the window at full width from the first step
(``solve_general``).

A run is single-threaded and owns its state; traces are treated as
immutable once returned. Identical inputs give bitwise-identical traces.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg

LS_STRATEGIES = ("qr", "pseudo_inverse", "regularized")

# relative threshold under which r_k and r_{k-1} count as equal (stall)
STALL_REL_TOL = 1e-14

_EPS = float(np.finfo(float).eps)

REASON_CONVERGED = "converged"
REASON_MAX_ITER = "max_iter"
REASON_STALLED = "stalled_window"
REASON_NONFINITE = "nonfinite"


@dataclass(frozen=True)
class AAConfig:
    """Solver settings: window size, stopping rule, and least-squares strategy.

    ``reg_lambda`` fixes the Tikhonov parameter; ``reg_eps`` instead scales it
    per step as ``reg_eps * max(diag(R_k.T R_k))``. Exactly one of the two
    must be set when ``ls_strategy == "regularized"``.
    """

    m: int = 1
    max_iter: int = 1000
    tol_rel: float = 1e-14
    ls_strategy: str = "qr"
    reg_lambda: float | None = None
    reg_eps: float | None = None

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 0:
            raise ValueError("window size m must be a nonnegative integer")
        if not isinstance(self.max_iter, (int, np.integer)) or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not self.tol_rel > 0.0:
            raise ValueError("tol_rel must be positive")
        if self.ls_strategy not in LS_STRATEGIES:
            raise ValueError(f"ls_strategy must be one of {LS_STRATEGIES}")
        if self.ls_strategy == "regularized":
            if (self.reg_lambda is None) == (self.reg_eps is None):
                raise ValueError("regularized strategy needs exactly one of reg_lambda/reg_eps")
            lam = self.reg_lambda if self.reg_lambda is not None else self.reg_eps
            if not lam > 0.0:
                raise ValueError("regularization parameter must be positive")
        elif self.reg_lambda is not None or self.reg_eps is not None:
            raise ValueError("reg_lambda/reg_eps only apply to the regularized strategy")


@dataclass
class IterationRecord:
    """Per-step diagnostics.

    ``beta`` holds the weights computed *at* step k (used to form x_{k+1});
    it stays empty for k = 0, for seed iterates, and for the final record.
    ``y`` is ``||r_k|| / ||r_{k-1}||``; ``phi`` the angle in [0, pi] between
    r_k and r_{k-1} (absent when either is zero); ``sigma`` the root-averaged
    error ``||x_k - x*||^(1/k)``, absent below the machine-noise floor
    (then ``sigma_floored`` is set) or when x* is unknown.
    """

    k: int
    x: np.ndarray
    r: np.ndarray
    r_norm: float
    beta: np.ndarray
    y: float | None = None
    phi: float | None = None
    sigma: float | None = None
    sigma_floored: bool = False


@dataclass
class Trace:
    records: list[IterationRecord]
    reason: str
    config: AAConfig
    n_seed: int

    @property
    def k_final(self) -> int:
        return self.records[-1].k

    @property
    def r_norms(self) -> np.ndarray:
        return np.array([rec.r_norm for rec in self.records])

    @property
    def residuals(self) -> np.ndarray:
        return np.stack([rec.r for rec in self.records])

    @property
    def iterates(self) -> np.ndarray:
        return np.stack([rec.x for rec in self.records])

    @property
    def betas(self) -> list[np.ndarray]:
        return [rec.beta for rec in self.records]

    @property
    def final_x(self) -> np.ndarray:
        return self.records[-1].x


@dataclass
class AAState:
    """Sliding window of the last min(k, m) + 1 iterates with their residuals
    and fixed-point images (newest last)."""

    k: int
    m: int
    xs: deque = field(default_factory=deque)
    rs: deque = field(default_factory=deque)
    qs: deque = field(default_factory=deque)

    @classmethod
    def from_single(cls, problem, x0, m: int) -> "AAState":
        state = cls(k=0, m=m)
        state.xs = deque(maxlen=m + 1)
        state.rs = deque(maxlen=m + 1)
        state.qs = deque(maxlen=m + 1)
        state.push(problem, linalg.as_vector(x0, "x0"))
        return state

    @classmethod
    def from_guesses(cls, problem, guesses: Sequence, m: int) -> "AAState":
        if len(guesses) != m + 1:
            raise ValueError(f"general start needs m + 1 = {m + 1} guesses, got {len(guesses)}")
        state = cls(k=m, m=m)
        state.xs = deque(maxlen=m + 1)
        state.rs = deque(maxlen=m + 1)
        state.qs = deque(maxlen=m + 1)
        for g in guesses:
            state.push(problem, linalg.as_vector(g, "initial guess"))
        return state

    def push(self, problem, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        qx = problem.q(x)
        r = x - qx
        self.xs.append(x)
        self.rs.append(r)
        self.qs.append(qx)
        return r, qx

    def window_residuals(self, m_eff: int) -> list[np.ndarray]:
        """[r_k, r_{k-1}, ..., r_{k-m_eff}], newest first."""
        return [self.rs[-1 - i] for i in range(m_eff + 1)]

    def validate(self, problem, rel: float = 1e-13) -> None:
        for x, r in zip(self.xs, self.rs):
            scale = max(float(np.linalg.norm(r)), float(np.linalg.norm(x)), 1.0)
            if np.linalg.norm(problem.residual(x) - r) > rel * scale:
                raise ValueError("window residual no longer matches its iterate")


def compute_beta(residuals: Sequence[np.ndarray], config: AAConfig) -> np.ndarray:
    """Acceleration weights for a residual window ``[r_k, ..., r_{k-m'}]`` (newest first).

    Builds the difference matrix ``R_k = [r_k - r_{k-1}, ..., r_k - r_{k-m'}]``
    and solves per the configured strategy. For a window of one with
    ``r_k = r_{k-1}`` (within STALL_REL_TOL relative) the weight is exactly 0.
    """
    rs = [linalg.as_vector(r, "residual") for r in residuals]
    m_eff = len(rs) - 1
    if m_eff < 1:
        raise ValueError("need at least two residuals in the window")
    rk = rs[0]
    if any(r.shape != rk.shape for r in rs):
        raise ValueError("window residuals have inconsistent dimensions")
    if m_eff == 1 and np.linalg.norm(rk - rs[1]) <= STALL_REL_TOL * np.linalg.norm(rk):
        return np.zeros(1)
    Rk = np.stack([rk - rs[i] for i in range(1, m_eff + 1)], axis=1)
    if config.ls_strategy == "qr":
        return linalg.qr_least_squares(Rk, rk)
    if config.ls_strategy == "pseudo_inverse":
        return -linalg.pseudo_inverse_solve(Rk, rk)
    if config.reg_lambda is not None:
        lam = config.reg_lambda
    else:
        peak = float(np.max(np.einsum("ij,ij->j", Rk, Rk)))
        if peak == 0.0:
            return np.zeros(m_eff)
        lam = config.reg_eps * peak
    return -linalg.regularized_solve(Rk, rk, lam)


def aa_step(problem, state: AAState, config: AAConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance the window by one accelerated step.

    Returns ``(x_next, r_next, beta)``; ``beta`` is empty when the effective
    window ``min(k, m)`` is zero (plain fixed-point step, including the
    mandatory ``x_1 = q(x_0)`` start).
    """
    if config.m != state.m:
        raise ValueError("config window size does not match the state")
    m_eff = min(state.k, config.m)
    if m_eff == 0:
        beta = np.zeros(0)
        x_next = state.qs[-1].copy()
    else:
        beta = compute_beta(state.window_residuals(m_eff), config)
        coeff = 1.0 + float(np.sum(beta))
        x_next = coeff * state.qs[-1]
        for i in range(1, m_eff + 1):
            x_next = x_next - beta[i - 1] * state.qs[-1 - i]
    r_next, _ = state.push(problem, x_next)
    state.k += 1
    return x_next, r_next, beta


def _make_record(k: int, x: np.ndarray, r: np.ndarray, prev: IterationRecord | None,
                 x_star: np.ndarray | None) -> IterationRecord:
    r_norm = float(np.linalg.norm(r))
    rec = IterationRecord(k=k, x=x, r=r, r_norm=r_norm, beta=np.zeros(0))
    if prev is not None and np.isfinite(r_norm) and np.isfinite(prev.r_norm):
        if prev.r_norm > 0.0:
            rec.y = r_norm / prev.r_norm
            if r_norm > 0.0:
                cosv = float(r @ prev.r) / (r_norm * prev.r_norm)
                rec.phi = float(np.arccos(np.clip(cosv, -1.0, 1.0)))
    if x_star is not None and k >= 1 and np.all(np.isfinite(x)):
        err = float(np.linalg.norm(x - x_star))
        if err > 100.0 * _EPS * float(np.linalg.norm(x_star)) + 1e-290:
            rec.sigma = err ** (1.0 / k)
        else:
            rec.sigma_floored = True
    return rec


def _run(problem, state: AAState, config: AAConfig, n_seed: int) -> Trace:
    x_star = problem.x_star
    records: list[IterationRecord] = []
    reason = None
    # seed records (k = 0 .. n_seed - 1)
    for k in range(n_seed):
        rec = _make_record(k, state.xs[k], state.rs[k], records[-1] if records else None, x_star)
        records.append(rec)
        if not np.isfinite(rec.r_norm):
            reason = REASON_NONFINITE
            break
        if rec.r_norm <= config.tol_rel * records[0].r_norm:
            reason = REASON_CONVERGED
            break
    no_change = 0
    while reason is None:
        if records[-1].k >= config.max_iter:
            reason = REASON_MAX_ITER
            break
        x_prev = state.xs[-1]
        x_next, r_next, beta = aa_step(problem, state, config)
        records[-1].beta = beta
        rec = _make_record(records[-1].k + 1, x_next, r_next, records[-1], x_star)
        records.append(rec)
        if not (np.all(np.isfinite(x_next)) and np.isfinite(rec.r_norm)):
            reason = REASON_NONFINITE
            break
        if rec.r_norm <= config.tol_rel * records[0].r_norm:
            reason = REASON_CONVERGED
            break
        if np.array_equal(x_next, x_prev):
            no_change += 1
            if no_change >= 2:
                # the window repeats an iterate verbatim and keeps doing so;
                # cannot happen for linear problems, guards user-supplied maps
                reason = REASON_STALLED
                break
        else:
            no_change = 0
    return Trace(records=records, reason=reason, config=config, n_seed=n_seed)


def solve(problem, x0, config: AAConfig) -> Trace:
    """Accelerated iteration from a single initial guess.

    Stops when ``||r_k|| <= tol_rel * ||r_0||`` or at ``max_iter`` steps.
    """
    state = AAState.from_single(problem, x0, config.m)
    return _run(problem, state, config, n_seed=1)


def solve_general(problem, guesses: Sequence, config: AAConfig) -> Trace:
    """Accelerated iteration from ``m + 1`` initial guesses (full window at once)."""
    state = AAState.from_guesses(problem, guesses, config.m)
    return _run(problem, state, config, n_seed=config.m + 1)


def fp_solve(problem, x0, max_iter: int = 1000, tol_rel: float = 1e-14) -> Trace:
    """Plain fixed-point iteration with the same trace schema (all beta empty)."""
    return solve(problem, x0, AAConfig(m=0, max_iter=max_iter, tol_rel=tol_rel))
