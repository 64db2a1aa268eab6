"""Exception types raised across the package."""


class DynRecipError(Exception):
    """Base class for all package errors."""


class ParseError(DynRecipError):
    """A temporal edge-list record could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(DynRecipError, ValueError):
    """Input violates a documented precondition."""


class EmptyNetworkError(ValidationError):
    """A network has no nodes (or no snapshots) left to work with."""


class UndefinedAUCError(ValidationError):
    """AUC requested on scores that contain a single class."""
