"""Exception types shared across the package."""


class BstoaError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(BstoaError, ValueError):
    """Input array shapes are inconsistent with the declared topology."""


class IndexOutOfRange(BstoaError, IndexError):
    """Flat subchannel index outside 0..m*n-1."""


class SingularSystem(BstoaError, ArithmeticError):
    """A linear solve failed on input that should have been regular."""


class ConstraintViolated(BstoaError, ValueError):
    """Delay matrix does not satisfy the topology constraint."""


class WrongTopology(BstoaError, ValueError):
    """Operation called with the other topology kind."""


class EmptyInput(BstoaError, ValueError):
    """No data supplied where at least one element is required."""


class ConfigInvalid(BstoaError, ValueError):
    """Sweep configuration failed validation."""


class UnderDetermined(BstoaError, ValueError):
    """Too few measurements for a 3D position fix."""


class SingularGeometry(BstoaError, ArithmeticError):
    """Anchor placement is degenerate; the fix is not unique."""
