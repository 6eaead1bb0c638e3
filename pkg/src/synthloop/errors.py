"""Shared exception types."""


class SynthloopError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.message = message
        self.field = field


class ValidationError(SynthloopError):
    """Input violated a documented invariant."""

    code = "validation"


class ParseError(SynthloopError):
    """A file could not be parsed; carries line number when known."""

    code = "parse"

    def __init__(self, message, line=None, field=None):
        super().__init__(message, field=field)
        self.line = line


class StateError(SynthloopError):
    """Operation attempted from the wrong session step."""

    code = "state"


class NotFoundError(SynthloopError):
    """Referenced artifact, version or resource does not exist."""

    code = "not_found"


class TrainingDivergedError(SynthloopError):
    """Non-finite loss during training; carries the epoch index."""

    code = "diverged"

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch
