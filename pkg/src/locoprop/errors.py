"""Exception hierarchy shared across the package."""


class LocoPropError(Exception):
    """Base class for all package errors."""


class ShapeError(LocoPropError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(LocoPropError, ArithmeticError):
    """Non-finite values, failed factorization, or a singular system."""


class NotInvertibleError(NumericError):
    """Transfer function has no unique inverse at the requested point."""


class RangeError(LocoPropError, IndexError):
    """Step or iteration index outside its valid range."""


class StateError(LocoPropError, RuntimeError):
    """Required intermediate results are missing."""


class FormatError(LocoPropError, ValueError):
    """Malformed input file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
