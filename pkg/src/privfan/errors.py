class PrivfanError(Exception):
    """Base class for all package errors."""


class FormatError(PrivfanError, ValueError):
    """A file or byte stream does not follow the expected layout."""


class LengthError(FormatError):
    """A payload is shorter or longer than its header announces."""


class ValidationError(PrivfanError, ValueError):
    """Values violate a type invariant (non-finite data, duplicate ids, ...)."""


class DecodeError(FormatError):
    """A coded payload could not be decoded."""


class CodecUnavailableError(PrivfanError, RuntimeError):
    """An external codec could not be run."""

    def __init__(self, message, command=None):
        super().__init__(message if command is None else f"{message}: {' '.join(command)}")
        self.command = command
