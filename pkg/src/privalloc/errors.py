"""Exception hierarchy shared across the package."""


class PrivAllocError(Exception):
    """Base class for every error raised by privalloc."""


class ParameterError(PrivAllocError, ValueError):
    """A numeric parameter is outside its admissible range."""


class ConfigurationError(PrivAllocError):
    """Instance/parameter combination violates a mechanism precondition."""


class FeasibilityError(PrivAllocError):
    """An assignment hands out more copies of a type than its supply."""


class HorizonExceededError(PrivAllocError):
    """A counter was fed more bits than its horizon allows."""


class MalformedBillboardError(PrivAllocError):
    """A billboard is truncated or internally inconsistent."""


class BundleCapError(PrivAllocError):
    """A bundle exceeds the configured maximum bundle size."""


class OracleContractError(PrivAllocError):
    """A valuation oracle returned a value outside [0, 1]."""


class InstanceError(PrivAllocError):
    """An instance is malformed or violates a valuation floor."""


class InstanceTooLargeError(PrivAllocError):
    """Exhaustive search would exceed its state-space guard."""


class NonTerminationError(InstanceError):
    """An auction failed to reach quiescence within its round guard."""


class UsageError(PrivAllocError):
    """A request names an unknown mode, kind or axis."""
