"""Exception types raised across the toolkit."""


class RangeBevError(Exception):
    """Base class for all toolkit errors."""


class InvalidBoxError(RangeBevError, ValueError):
    pass


class ParseError(RangeBevError, ValueError):
    """Malformed input file. Carries the byte offset or line number when known."""

    def __init__(self, message, *, offset=None, line=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class ConfigError(RangeBevError, ValueError):
    pass


class DomainError(RangeBevError, ValueError):
    pass


class UndefinedResultError(RangeBevError, ArithmeticError):
    pass
