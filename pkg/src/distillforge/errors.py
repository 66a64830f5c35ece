"""Exception taxonomy shared by all distillforge modules."""


class DistillForgeError(Exception):
    """Base class for all library errors."""


class DimensionError(DistillForgeError, ValueError):
    """Shapes or extents are incompatible with the requested operation."""


class DomainError(DistillForgeError, ValueError):
    """A scalar argument is outside its mathematical domain (e.g. T <= 0)."""


class ConfigError(DistillForgeError, ValueError):
    """Inconsistent or invalid configuration values."""


class ValidationError(DistillForgeError, ValueError):
    """Input data violates a documented precondition (e.g. probability rows)."""


class StaleTapeError(DistillForgeError, RuntimeError):
    """backward() called again without a fresh forward pass."""


class SizeError(DistillForgeError, ValueError):
    """A collection is too small (or empty) for the requested operation."""


class StateError(DistillForgeError, RuntimeError):
    """An object is in the wrong state (e.g. optimizer step without grads)."""


class FormatError(DistillForgeError, ValueError):
    """A serialized file is malformed; the message names the offending field."""


class LayoutError(DistillForgeError, ValueError):
    """A dataset directory does not have the expected class layout."""
