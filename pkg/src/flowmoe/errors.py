"""Exception types shared across the package."""


class FlowMoeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FlowMoeError):
    """Bad or missing configuration key/value."""


class SchemaError(FlowMoeError):
    """Input CSV does not match the configured schema."""


class FormatError(FlowMoeError):
    """Serialized model or container is malformed or version-mismatched."""


class TrainingError(FlowMoeError):
    """Training produced a non-finite gradient or parameter."""
