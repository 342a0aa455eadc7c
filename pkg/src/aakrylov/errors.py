"""Exception types shared across the package."""


class SingularMatrixError(ValueError):
    """Matrix is singular to working precision."""


class StallError(RuntimeError):
    """Two consecutive residuals coincide where a recursion requires otherwise."""


class VerificationError(RuntimeError):
    """A proved identity failed numerically beyond its tolerance."""


class ProblemFormatError(ValueError):
    """Problem definition (builtin name or JSON payload) is malformed."""
