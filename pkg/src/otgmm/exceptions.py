"""Exception types raised across the package."""


class OTGMMError(Exception):
    """Base class for all package errors."""


class InvalidInputError(OTGMMError, ValueError):
    """An argument violates a documented precondition."""


class NumericalInputError(OTGMMError, ValueError):
    """Non-finite numbers where finite ones are required."""


class InfeasibleSupportError(OTGMMError, ValueError):
    """A coupling puts mass where the reference product measure has none."""


class SizeLimitError(OTGMMError, ValueError):
    """Instance too large for an exact oracle."""


class EmptySetError(OTGMMError, ValueError):
    """An operation that needs a nonempty set received an empty one."""
