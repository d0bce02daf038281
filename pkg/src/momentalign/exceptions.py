class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class ConfigurationError(ValueError):
    """A model, pyramid or generator configuration is invalid or infeasible."""


class InputError(ValueError):
    """User-supplied data (query, interval, file) is malformed."""
