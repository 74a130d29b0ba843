"""Shared exception hierarchy."""


class ZebuError(Exception):
    """Base class for all errors raised by this package."""


class SourceError(ZebuError):
    """An error tied to a position in an input file."""

    def __init__(self, message, line=None, col=None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.col = col

    def __str__(self):
        if self.line is None:
            return self.message
        return f"{self.line}:{self.col}: {self.message}"
