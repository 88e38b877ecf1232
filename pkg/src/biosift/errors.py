"""Exception types shared across the toolkit."""


class BiosiftError(Exception):
    """Base class for all toolkit errors."""


class FormatError(BiosiftError, ValueError):
    """A record file violates its schema.

    Carries the offending line number and field name when known so batch
    ingestion failures can be located without re-parsing the file.
    """

    def __init__(self, message, line=None, field=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(BiosiftError, ValueError):
    """An in-memory value violates a documented invariant."""


class DomainError(BiosiftError, ValueError):
    """The requested quantity is undefined for the given input."""


class FitError(BiosiftError, ValueError):
    """A distribution or regression fit has no solution on this input."""


class GenerationError(BiosiftError, RuntimeError):
    """A synthetic scenario cannot be realized with its constraints."""


class UnknownCandidateError(BiosiftError, KeyError):
    """A verdict references a candidate that was never emitted for review."""
