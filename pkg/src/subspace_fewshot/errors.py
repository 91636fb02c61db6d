"""Exception hierarchy shared across the package."""


class SubspaceError(Exception):
    """Base class for all package errors."""


class FormatError(SubspaceError, ValueError):
    """A file or manifest does not conform to the expected layout."""


class DimensionError(SubspaceError, ValueError):
    """Operands have incompatible shapes or sizes."""


class NumericalError(SubspaceError, ArithmeticError):
    """A computation produced non-finite values or hit a singular system."""


class NumericalWarning(UserWarning):
    """A quantity left its admissible range by more than rounding allows."""
