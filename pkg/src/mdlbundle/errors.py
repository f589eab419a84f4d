"""Exception hierarchy shared by every module."""


class MDLError(Exception):
    """Base class for all package errors."""


class DomainError(MDLError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(MDLError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers."""


class DegeneracyError(NumericError):
    """A Fisher information matrix is singular or nearly so."""


class ConvergenceError(MDLError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class PreconditionError(MDLError, ValueError):
    """A documented precondition of an operation does not hold."""


class ConstructionError(MDLError, RuntimeError):
    """A grid could not be built."""


class ConfigError(MDLError, ValueError):
    """A configuration violates a required inequality."""


class CapacityError(MDLError, RuntimeError):
    """An exhaustive enumeration would exceed the configured cap."""


class UnsupportedError(MDLError, NotImplementedError):
    """The requested scheme is not available for this family."""


class WrongRouteError(MDLError, ValueError):
    """A bound was requested for a family it does not apply to."""


class DecodeError(MDLError, ValueError):
    """A bitstream could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
