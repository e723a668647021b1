"""Exception types shared across the package."""


class RbmTomoError(Exception):
    """Base class for all package errors."""


class DimensionError(RbmTomoError, ValueError):
    """Array shapes do not match the model dimensions."""


class CapacityError(RbmTomoError, RuntimeError):
    """Problem size exceeds the exact-enumeration cap."""


class ConfigError(RbmTomoError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(RbmTomoError, RuntimeError):
    """A numerical routine failed (non-convergence, degenerate spectrum, ...)."""
