"""Exception hierarchy. Each class carries a short machine-readable code used by the CLI."""

from __future__ import annotations


class SeptError(Exception):
    code = "error"


class ValidationError(SeptError, ValueError):
    code = "validation"


class FormatError(SeptError, ValueError):
    """Malformed or truncated file. ``offset`` is the byte offset (or line number for text files)."""

    code = "format"

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ParseError(SeptError, ValueError):
    code = "parse"

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class BudgetError(SeptError, ValueError):
    code = "budget"


class TrainingError(SeptError, RuntimeError):
    code = "training"
