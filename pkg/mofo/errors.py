"""Exception hierarchy shared by every mofo module."""
from typing import Optional


class MofoError(Exception):
    """Base class for all mofo failures."""


class RejectedInputError(MofoError, ValueError):
    """An operation's precondition does not hold for the given input."""


class FormatError(MofoError):
    """An artifact on disk or in memory is malformed."""

    def __init__(self, message: str, offset: Optional[int] = None, path: Optional[str] = None):
        self.message = message
        self.offset = offset
        self.path = path
        super().__init__(str(self))

    def __str__(self) -> str:
        parts = [self.message]
        if self.offset is not None:
            parts.append(f"at byte offset {self.offset}")
        if self.path is not None:
            parts.append(f"in {self.path}")
        return " ".join(parts)


class DivergenceError(MofoError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class StageError(MofoError):
    """A CLI pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
