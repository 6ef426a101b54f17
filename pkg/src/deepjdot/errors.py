"""Exception hierarchy shared across the package."""


class DeepJDOTError(Exception):
    """Base class for all package errors."""


class ShapeError(DeepJDOTError, ValueError):
    """Array dimensions do not agree."""


class InvalidInputError(DeepJDOTError, ValueError):
    """Input values violate a precondition (non-finite, negative, out of range)."""


class InvalidMeasureError(InvalidInputError):
    """Measure weights are negative, non-finite or do not sum to one."""


class UnsupportedInstanceError(DeepJDOTError, ValueError):
    """The instance is outside what the routine supports."""


class DataFormatError(DeepJDOTError, ValueError):
    """A data file is malformed."""


class ConfigError(DeepJDOTError, ValueError):
    """A run configuration is invalid."""


class DivergenceError(DeepJDOTError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""
