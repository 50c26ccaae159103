"""Exception types shared across the engine."""


class MslmError(Exception):
    """Base class for engine errors."""


class InvalidDepthError(MslmError):
    """Raised when a depth value is not strictly positive."""


class DimensionMismatchError(MslmError):
    """Raised when feature/embedding dimensions disagree."""


class MapFormatError(MslmError):
    """Raised when a serialized map file is malformed.

    Carries the byte offset where parsing failed when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ProviderError(MslmError):
    """Raised when an embedding/codegen backend fails or is unreachable."""


class UnsupportedInstructionError(MslmError):
    """Raised when the rule-based plan generator cannot handle an instruction."""


class ProgramParseError(MslmError):
    """Raised on plan-program syntax or whitelist violations."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            loc = f"line {line}" if column is None else f"line {line}, col {column}"
            message = f"{message} ({loc})"
        super().__init__(message)
        self.line = line
        self.column = column
