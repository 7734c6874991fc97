"""Exception types shared across the package."""


class FusedTreeError(Exception):
    """Base class for all package errors."""


class DataError(FusedTreeError):
    """Invalid or inconsistent input data (shape, schema, missing values)."""


class ConvergenceError(FusedTreeError):
    """An iterative fit failed to converge within its iteration budget."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
