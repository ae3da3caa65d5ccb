"""Exception hierarchy shared across the package."""


class ExlgmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ExlgmError, ValueError):
    """Arguments violate a documented precondition."""


class DegenerateSiteError(ExlgmError):
    """A site cannot be modelled (no positive values, threshold above support...)."""


class TooFewExceedancesError(DegenerateSiteError):
    """Fewer threshold exceedances than the configured minimum."""


class ConvergenceError(ExlgmError):
    """Numerical optimisation failed to converge."""


class NotPositiveDefiniteError(ExlgmError, ArithmeticError):
    """A precision matrix failed its Cholesky factorization."""


class OutOfHullError(InvalidInputError):
    """Sites fall outside the mesh."""

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)
