"""Windowed Anderson acceleration for fixed-point iterations.

A solver for the accelerated iteration with sliding window m, a reference
GMRES, verification tools for the residual-polynomial structure of the
linear case (recurrences, memory effect, per-step reduction bounds, rank-two
closed forms), and reproducible experiment drivers that map convergence
factors over initial conditions.
"""

from . import analysis, experiments, linalg
from .errors import (
    ProblemFormatError,
    SingularMatrixError,
    StallError,
    VerificationError,
)
from .gmres import GmresTrace, gmres
from .problems import (
    BUILTIN_NAMES,
    LinearProblem,
    NonlinearProblem,
    builtin,
    default_x0,
    eigen_directions_2x2,
    load_problem_json,
    resolve_problem,
)
from .solver import (
    AAConfig,
    AAState,
    IterationRecord,
    Trace,
    aa_step,
    compute_beta,
    fp_solve,
    solve,
    solve_general,
)

__version__ = "0.1.0"

__all__ = [
    "AAConfig",
    "AAState",
    "BUILTIN_NAMES",
    "GmresTrace",
    "IterationRecord",
    "LinearProblem",
    "NonlinearProblem",
    "ProblemFormatError",
    "SingularMatrixError",
    "StallError",
    "Trace",
    "VerificationError",
    "aa_step",
    "analysis",
    "builtin",
    "compute_beta",
    "default_x0",
    "eigen_directions_2x2",
    "experiments",
    "fp_solve",
    "gmres",
    "linalg",
    "load_problem_json",
    "resolve_problem",
    "solve",
    "solve_general",
]
