"""Exception hierarchy shared by the aggregation modules and the CLI."""


class GenMeanError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GenMeanError, ValueError):
    """Malformed or out-of-domain input (NaN, wrong shape, bad label, ...)."""


class DegeneracyError(GenMeanError, ArithmeticError):
    """A covariance or accumulated precision matrix is not positive definite."""


class CapacityError(GenMeanError):
    """An enumeration would exceed its configured cap."""

    def __init__(self, message, count):
        super().__init__(message)
        self.count = count


class AccuracyError(GenMeanError, ArithmeticError):
    """A numerical estimate missed its requested tolerance.

    The best available estimate is kept on ``best`` so callers can still
    inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
