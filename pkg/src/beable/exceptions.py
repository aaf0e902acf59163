"""Exception types raised across the package."""


class BeableError(Exception):
    """Base class for all package errors."""


class SizeError(BeableError):
    """A Hilbert-space dimension exceeds the configured maximum."""


class ShapeError(BeableError, ValueError):
    """Array shapes or operator structure do not match what was declared."""


class ConfigError(BeableError, ValueError):
    """Invalid run or scenario configuration."""


class NumericalError(BeableError, ArithmeticError):
    """A numerical tolerance check failed."""


class DomainError(BeableError, ValueError):
    """Input lies outside the mathematical domain of an operation."""


class StarvationError(BeableError):
    """A source microstate has (numerically) zero weight."""


class NotNormalError(BeableError, ValueError):
    """A coefficient matrix is not normal, so no unitary similarity diagonalizes it."""


class AlgebraError(BeableError, ValueError):
    """Operators fail the expected commutation relations."""


class RangeError(BeableError, ValueError):
    """A requested time window is not covered by the data."""


class FitError(BeableError):
    """A decay fit could not be performed; ``data`` holds the inputs."""

    def __init__(self, message, data=None):
        super().__init__(message)
        self.data = data
