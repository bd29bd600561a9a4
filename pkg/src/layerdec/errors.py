"""Exception hierarchy shared across the engine.

Every failure the library raises on purpose derives from EngineError, so
callers (and the CLI) can separate engine errors from genuine bugs.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(EngineError):
    """An argument violates a documented precondition."""


class InvalidTrace(EngineError):
    """A trace object violates its structural invariants."""


class IoError(EngineError):
    """An underlying read or write failed."""


class FormatError(EngineError):
    """A byte stream is not a valid trace file."""


class TruncatedError(FormatError):
    """A trace file ends mid-record.

    ``step`` is the index of the step being read when the stream ran out,
    or None when the header itself is incomplete.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class VersionError(FormatError):
    """The file's format version is not supported by this reader."""


class LayerNotCaptured(EngineError):
    """A requested layer is absent from the trace header's layer list."""


class InvalidConfig(EngineError):
    """A decode configuration cannot be applied to the given trace."""


class DegenerateToken(EngineError):
    """A token's probability mass underflows across the whole layer set."""


class InvalidSpec(EngineError):
    """A synthetic-scenario spec violates its invariants."""


class InvalidExample(EngineError):
    """An evaluation example is malformed."""


class StepError(EngineError):
    """Wraps a per-step failure with the step index attached."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
