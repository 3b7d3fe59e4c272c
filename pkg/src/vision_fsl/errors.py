"""Exception types shared across the package."""


class VisionError(Exception):
    """Base class for all package errors."""


class ParseError(VisionError):
    """A data file could not be parsed.

    The message carries the file path and 1-based line number.
    """

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ValidationError(VisionError):
    """Loaded data violates a structural invariant."""


class ContractError(VisionError):
    """An operation was called with arguments violating its preconditions."""


class GenerationError(VisionError):
    """Pseudo-task generation ran out of candidates."""


class ConfigurationError(VisionError):
    """Requested episode shape cannot be served by the data."""
