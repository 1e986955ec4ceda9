"""Exception types raised by the package."""


class RisDoaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RisDoaError, ValueError):
    """Raised when an argument is non-finite, mis-shaped or out of range."""


class IllPosedDictionaryError(RisDoaError, ValueError):
    """Raised when an angle grid is too coarse to fit a transformation matrix."""


class FormulationError(RisDoaError):
    """Raised when the semidefinite program cannot be assembled."""


class ConfigError(RisDoaError, ValueError):
    """Raised for malformed configuration or snapshot files."""
