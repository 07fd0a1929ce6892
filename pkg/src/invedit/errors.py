"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class CheckpointFormatError(RuntimeError):
    """Raised when a checkpoint manifest or blob is malformed."""


class ConfigError(RuntimeError):
    """Raised when a run configuration is missing or inconsistent."""
