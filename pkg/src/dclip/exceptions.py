"""Error types shared across the package.

Every failure mode maps to one of these so callers (and the CLI exit-code
logic) can tell usage problems, bad input data, and numeric blowups apart.
"""


class DclipError(Exception):
    """Base class for all package errors."""


class ShapeError(DclipError):
    """Tensor dimensions do not line up for the requested operation."""


class ParameterError(DclipError):
    """An argument is outside its documented range."""


class DegenerateVectorError(DclipError):
    """A vector with (near-)zero norm was passed where a direction is needed."""


class NumericError(DclipError):
    """NaN or Inf appeared where finite values are required."""


class InputError(DclipError):
    """User-supplied data is structurally invalid (empty, misaligned ids, ...)."""


class ParseError(DclipError):
    """A file does not conform to its format; carries a position."""

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class ValidationError(DclipError):
    """Parsed data violates an invariant; names the offending field."""

    def __init__(self, message: str, *, field: str | None = None):
        if field is not None:
            message = f"{message} [field: {field}]"
        super().__init__(message)
        self.field = field


class ConfigError(DclipError):
    """Inconsistent run configuration (e.g. checkpoint/variant mismatch)."""
