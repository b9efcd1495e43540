"""Exception hierarchy shared by every module."""


class FlitextError(Exception):
    """Base class; the CLI turns these into one-line diagnostics."""


class DimensionError(FlitextError):
    """Tensor shapes do not fit the operation."""


class PreconditionError(FlitextError):
    """An operation precondition was violated by the caller."""


class ConfigError(FlitextError):
    """Invalid configuration value or combination."""


class NumericError(FlitextError):
    """Non-finite values where finite ones are required, or divergence."""


class UsageError(FlitextError):
    """API misuse (e.g. backward on a non-scalar)."""


class DataError(FlitextError):
    """Malformed dataset content, labels, or files."""
