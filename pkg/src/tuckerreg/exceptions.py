"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or matrix dimensions are inconsistent with the requested operation."""


class PartitionError(ValueError):
    """Row/column mode sets do not form a valid partition of the tensor modes."""


class NumericalError(RuntimeError):
    """A numerical routine failed beyond recovery (e.g. non-PD posterior covariance)."""


class ConfigError(ValueError):
    """Invalid configuration file or option values."""
