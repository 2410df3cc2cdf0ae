"""Exception types shared across the package."""


class MeetsepError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MeetsepError):
    """An argument violates a documented precondition."""


class FormatError(MeetsepError):
    """A file or payload is syntactically or structurally unsupported."""


class AudioIOError(MeetsepError):
    """Reading or writing audio failed (truncated data, unwritable path)."""


class NumericError(MeetsepError):
    """A computation produced non-finite or otherwise unusable values."""


class TrainingError(MeetsepError):
    """Optimisation failed; carries the step at which it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
