"""Exception hierarchy shared across the package.

``ValidationError`` covers bad inputs (CLI exit code 1), ``RuntimeFailure``
covers failures during an otherwise valid run (CLI exit code 2).
"""


class GarmsegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GarmsegError):
    """Invalid input: bad shapes, out-of-range ids, malformed arguments."""


class ScanParseError(ValidationError):
    """Malformed scan file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class RuntimeFailure(GarmsegError):
    """A valid run went wrong (NaN loss, missing checkpoint, ...)."""
