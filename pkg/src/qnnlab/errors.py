"""Exception hierarchy shared by every module."""


class QnnLabError(Exception):
    """Base class for all errors raised by qnnlab."""


class ConfigError(QnnLabError, ValueError):
    """Inconsistent network, precision or accelerator configuration."""


class InputError(QnnLabError, ValueError):
    """Bad argument to an operation (empty batch, label out of range, ...)."""


class IngestionError(QnnLabError):
    """Dataset file could not be parsed."""


class BadMagicError(IngestionError):
    pass


class TruncatedFileError(IngestionError):
    pass


class CountMismatchError(IngestionError):
    pass


class TrainingDiverged(QnnLabError):
    """Loss became non-finite. ``state`` is the last state with a finite loss."""

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class CheckpointError(QnnLabError):
    """Checkpoint file is missing, truncated or has an unknown version."""


class MissingCheckpointError(CheckpointError):
    pass


class MalformedOutputError(QnnLabError):
    """A file written by an earlier run cannot be parsed."""
