"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so every failure raised from library code
should derive from :class:`GencovError`.
"""


class GencovError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GencovError):
    """Missing column, unknown model tag, invalid option value."""


class DataError(GencovError):
    """Input data violates an invariant (duplicate ids, bad binary values, ...)."""


class ParseError(DataError):
    """A CSV cell could not be parsed as a finite decimal number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class AlignmentError(DataError):
    """A shared sample id carries different covariates in the two studies."""


class ShapeError(DataError):
    """Dimension mismatch between matrices/vectors."""


class DegenerateDataError(DataError):
    """Data cannot support the requested computation (single class, N < 2, ...)."""


class EmptyDataError(DegenerateDataError):
    """No samples available."""


class UnsupportedDesignError(DataError):
    """Study design not supported in this mode (e.g. overlap under case-control)."""


class ConvergenceError(GencovError):
    """Coordinate descent / IRLS did not converge within the sweep budget."""

    def __init__(self, message, max_change=float("nan")):
        super().__init__(message)
        self.max_change = max_change


class GenerationError(GencovError):
    """Simulation could not produce the requested sample."""


class OraclePrecisionError(GencovError):
    """Monte Carlo truth is not precise enough relative to the estimator SE."""


class DomainError(GencovError, ValueError):
    """Argument outside the mathematical domain of a function."""
