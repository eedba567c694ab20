"""Exception hierarchy shared across the package."""


class TsyncError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TsyncError, ValueError):
    """Invalid parameter combination or unusable settings."""


class DimensionError(TsyncError, ValueError):
    """Array length or shape does not match what the operation expects."""


class FormatError(TsyncError, ValueError):
    """A serialized model or dataset stream is malformed or truncated."""


class UnsupportedVersionError(FormatError):
    """A serialized stream carries a format version this build cannot read."""


class TrainingDivergedError(TsyncError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, message, *, epoch=None, step=None, last_loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.last_loss = last_loss
