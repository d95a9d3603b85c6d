"""Tagged errors shared across the package.

Every error carries a module-scoped code like ``"io/unsorted-frames"`` so the
CLI can report a stable identifier and exit nonzero.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base error with a stable ``module/code`` tag."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code

    def __str__(self) -> str:
        return f"[{self.code}] {super().__str__()}"


class DetectionFileError(EngineError):
    """Malformed detection/mask/truth file; carries the offending line."""

    def __init__(self, code: str, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(code, message)
        self.line = line
