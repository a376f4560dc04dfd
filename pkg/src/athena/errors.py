"""Exception hierarchy shared by every athena module."""


class AthenaError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(AthenaError, ValueError):
    """An argument violates a documented precondition."""


class FileFormatError(AthenaError):
    """A binary file does not match its declared format (bad magic, bad header)."""


class TruncatedFileError(AthenaError, OSError):
    """A binary file ended before its declared payload was complete."""


class DataConsistencyError(AthenaError):
    """Two artifacts that must agree (e.g. image/label counts) do not."""


class DegenerateInputError(AthenaError):
    """Input is syntactically valid but the requested quantity is undefined on it."""


class TrainingError(AthenaError):
    """Training diverged or could not proceed."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class UnsupportedTransformError(AthenaError):
    """The transform kind does not support the requested operation (e.g. adjoint)."""


class RegistryError(AthenaError, KeyError):
    """A referenced weak-defense id cannot be resolved."""


class ConfigError(AthenaError):
    """An attack or experiment configuration is invalid for the requested operation."""
