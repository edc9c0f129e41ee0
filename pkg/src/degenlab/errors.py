"""Exception types shared across the package."""


class DegenLabError(Exception):
    """Base class for all package errors."""


class PreconditionError(DegenLabError, ValueError):
    """An operation was called with inputs violating its precondition."""


class DegenerateInputError(PreconditionError):
    """A localized quantity was requested on an empty node set."""


class UnsupportedDimensionError(DegenLabError):
    """The requested construction is not available in this dimension."""


class ConvergenceError(DegenLabError):
    """The minimizer hit its iteration cap before reaching the tolerance.

    The partial solution and report are attached so callers can inspect them.
    """

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report


class NumericalError(DegenLabError):
    """A non-finite value appeared during a solve."""

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report
