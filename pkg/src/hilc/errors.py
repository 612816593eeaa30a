"""Exception types shared across the package."""


class HilcError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HilcError):
    """Invalid configuration values."""


class InputError(HilcError):
    """Invalid runtime input (bad action, empty dataset, dim mismatch...)."""


class DataFormatError(HilcError):
    """Corrupt or truncated on-disk data."""


class SchemaVersionError(DataFormatError):
    """On-disk schema version does not match this code."""


class TrainingError(HilcError):
    """Training diverged or could not proceed."""
