class GazeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(GazeError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(GazeError, ValueError):
    """Malformed, inconsistent or insufficient input data."""


class EventFormatError(DataError):
    """A malformed event record. ``location`` is a line number (CSV) or byte offset (binary)."""

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)
        self.location = location


class CheckpointError(GazeError, ValueError):
    """Unreadable checkpoint: wrong magic/version or a corrupt payload."""


class NumericError(GazeError, ArithmeticError):
    """Non-finite loss or parameters during training."""
