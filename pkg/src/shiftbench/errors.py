"""Error types shared across the toolkit."""
from __future__ import annotations

__all__ = ["ShiftBenchError", "ValidationError"]


class ShiftBenchError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ShiftBenchError, ValueError):
    """Input data violates a documented invariant.

    Parameters
    ----------
    message:
        Human-readable description naming the offending field.
    line:
        1-based line number for errors raised while parsing a JSONL stream.
    field:
        Name of the violated field, when applicable.
    """

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field
