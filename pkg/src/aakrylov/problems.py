"""Fixed-point test problems.

A problem bundles an iteration map ``q``, its residual ``r(x) = x - q(x)``,
and (when known) the fixed point. Linear problems are affine maps
``q(x) = M x + b`` whose fixed point solves ``(I - M) x* = b``. Maps accept
arrays of shape ``(..., n)`` and act on the last axis, so whole batches of
iterates can be advanced in one call.

The registry holds the named 2x2 test problems used throughout the test and
experiment suites; user problems load from JSON (linear only).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import linalg
from .errors import ProblemFormatError


@dataclass
class LinearProblem:
    """Affine fixed-point map ``q(x) = M x + b`` with ``A = I - M`` nonsingular."""

    M: np.ndarray
    b: np.ndarray
    x_star: np.ndarray | None = None

    def __post_init__(self):
        M = linalg.as_matrix(self.M, "M")
        n, p = M.shape
        if n != p:
            raise ValueError(f"M must be square, got shape {M.shape}")
        b = linalg.as_vector(self.b, "b")
        if b.shape[0] != n:
            raise ValueError(f"b length {b.shape[0]} does not match M dimension {n}")
        if not np.any(M):
            raise ValueError("M must be nonzero (the iteration would be trivial)")
        A = np.eye(n) - M
        # pivot test: raises SingularMatrixError when I - M is singular
        linalg.solve_square(A, np.zeros(n))
        x_star = self.x_star
        if x_star is not None:
            x_star = linalg.as_vector(x_star, "x_star")
            if x_star.shape[0] != n:
                raise ValueError("x_star dimension does not match M")
            if np.linalg.norm(A @ x_star - b) > 1e-12 * (1.0 + np.linalg.norm(b)):
                raise ValueError("x_star does not satisfy (I - M) x* = b")
            x_star.setflags(write=False)
        M.setflags(write=False)
        b.setflags(write=False)
        self.M, self.b, self.x_star = M, b, x_star

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def A(self) -> np.ndarray:
        return np.eye(self.n) - self.M

    def q(self, x) -> np.ndarray:
        x = self._check(x)
        return x @ self.M.T + self.b

    def residual(self, x) -> np.ndarray:
        """r(x) = x - q(x), which equals A x - b for this map."""
        x = self._check(x)
        return x - self.q(x)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n,):
            raise ValueError(f"iterate has shape {x.shape}, expected last axis {self.n}")
        return x


@dataclass
class NonlinearProblem:
    """General fixed-point map; ``q_map`` must act on the last axis of (..., n) arrays."""

    q_map: Callable[[np.ndarray], np.ndarray]
    n: int
    x_star: np.ndarray | None = None
    spectral_radius_at_star: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be at least 1")
        if self.x_star is not None:
            x_star = linalg.as_vector(self.x_star, "x_star")
            if x_star.shape[0] != self.n:
                raise ValueError("x_star dimension does not match n")
            if np.linalg.norm(self.q_map(x_star) - x_star) > 1e-12:
                raise ValueError("x_star is not a fixed point of q")
            x_star.setflags(write=False)
            self.x_star = x_star

    def q(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.asarray(self.q_map(x), dtype=float)
        if out.shape != x.shape:
            raise ValueError("q map changed the iterate shape")
        return out

    def residual(self, x) -> np.ndarray:
        x = self._check(x)
        return x - self.q(x)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n,):
            raise ValueError(f"iterate has shape {x.shape}, expected last axis {self.n}")
        return x


Problem = LinearProblem | NonlinearProblem


def _q_coupled_quadratic(x: np.ndarray) -> np.ndarray:
    x1 = x[..., 0]
    x2 = x[..., 1]
    return 0.5 * np.stack((x1 + x1**2 + x2**2, x2 + x1**2), axis=-1)


BUILTIN_NAMES = ("prob41", "prob42", "prob43_nonlinear", "example32_stall", "prob_nrbe")

# Initial guesses the experiment drivers fall back to when none is given.
DEFAULT_X0 = {
    "prob41": (0.2, 0.3),
    "prob42": (0.0001, 0.3023),
    "example32_stall": (-2.0, 2.0),
    "prob_nrbe": (1.2, 1.3),
}


def builtin(name: str) -> Problem:
    """Return a registered test problem by name."""
    if name == "prob41":
        return LinearProblem([[2.0 / 3.0, 0.25], [0.0, 1.0 / 3.0]], [0.0, 0.0], [0.0, 0.0])
    if name == "prob42":
        return LinearProblem([[0.5784, 0.0], [0.0, 0.999]], [0.0, 0.0], [0.0, 0.0])
    if name == "prob43_nonlinear":
        return NonlinearProblem(
            _q_coupled_quadratic, n=2, x_star=[0.0, 0.0], spectral_radius_at_star=0.5
        )
    if name == "example32_stall":
        # q amplifies the first component (||M|| > 1): AA(1) from (-2, 2)
        # repeats a residual once, then converges anyway.
        return LinearProblem([[1.5, 0.0], [0.0, 0.5]], [0.0, 0.0], [0.0, 0.0])
    if name == "prob_nrbe":
        # iteration x_{k+1} = M (x_k - ones) + ones, i.e. affine term (I - M) @ ones,
        # so the fixed point is exactly (1, 1).
        M = np.array([[8.0 / 9.0, 0.25], [0.0, 2.0 / 3.0]])
        ones = np.ones(2)
        return LinearProblem(M, (np.eye(2) - M) @ ones, ones)
    raise ProblemFormatError(
        f"unknown builtin problem '{name}'; valid names: {', '.join(BUILTIN_NAMES)}"
    )


def default_x0(name: str) -> np.ndarray | None:
    x0 = DEFAULT_X0.get(name)
    return None if x0 is None else np.asarray(x0, dtype=float)


def problem_from_dict(data: dict) -> LinearProblem:
    """Build a linear problem from the JSON schema {"M": rows, "b": vec, "x_star": vec?}."""
    if not isinstance(data, dict):
        raise ProblemFormatError("problem JSON must be an object")
    if "M" not in data or "b" not in data:
        raise ProblemFormatError("problem JSON requires fields 'M' and 'b'")
    unknown = set(data) - {"M", "b", "x_star"}
    if unknown:
        raise ProblemFormatError(f"unknown problem fields: {sorted(unknown)}")
    try:
        M = np.asarray(data["M"], dtype=float)
        b = np.asarray(data["b"], dtype=float)
        x_star = None if data.get("x_star") is None else np.asarray(data["x_star"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFormatError(f"problem fields must be numeric arrays: {exc}") from exc
    if M.ndim != 2:
        raise ProblemFormatError("'M' must be an array of rows")
    try:
        return LinearProblem(M, b, x_star)
    except ValueError as exc:
        raise ProblemFormatError(str(exc)) from exc


def load_problem_json(path) -> LinearProblem:
    """Load a linear problem from a JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"invalid JSON in {path}: {exc}") from exc
    return problem_from_dict(data)


def resolve_problem(text: str) -> Problem:
    """Resolve a CLI problem argument: 'builtin:NAME' or a JSON file path."""
    if text.startswith("builtin:"):
        return builtin(text[len("builtin:") :])
    path = Path(text)
    if not path.exists():
        raise ProblemFormatError(
            f"problem '{text}' is neither 'builtin:NAME' nor an existing JSON file; "
            f"builtins: {', '.join(BUILTIN_NAMES)}"
        )
    return load_problem_json(path)


def eigen_directions_2x2(A) -> list[tuple[float, np.ndarray]]:
    """Real eigenpairs of a 2x2 matrix, unit eigenvectors, sorted by eigenvalue.

    Raises ValueError for complex spectra, naming the (negative) discriminant.
    """
    M = linalg.as_matrix(A, "A")
    if M.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {M.shape}")
    a, bb, c, d = M.ravel()
    tr = a + d
    det = a * d - bb * c
    disc = tr * tr - 4.0 * det
    if disc < 0.0:
        raise ValueError(f"complex eigenvalues: discriminant {disc:.6e} < 0")
    root = np.sqrt(disc)
    pairs = []
    for lam in ((tr - root) / 2.0, (tr + root) / 2.0):
        cand1 = np.array([-bb, a - lam])
        cand2 = np.array([d - lam, -c])
        v = cand1 if np.linalg.norm(cand1) >= np.linalg.norm(cand2) else cand2
        if np.linalg.norm(v) == 0.0:
            # multiple of the identity: any direction works; give the canonical basis
            v = np.array([1.0, 0.0]) if not pairs else np.array([0.0, 1.0])
        v = v / np.linalg.norm(v)
        nz = np.flatnonzero(np.abs(v) > 1e-14)
        if nz.size and v[nz[0]] < 0:
            v = -v
        pairs.append((float(lam), v))
    return pairs
