"""Exception types shared across the package."""


class EffBevError(Exception):
    """Base class for all package errors."""


class DimensionError(EffBevError, ValueError):
    """Raised when tensor shapes are incompatible."""


class ConfigError(EffBevError, ValueError):
    """Raised for invalid configuration values."""


class CalibrationError(EffBevError, ValueError):
    """Raised for invalid camera calibration or ego poses."""


class FormatError(EffBevError, ValueError):
    """Raised when an on-disk artifact cannot be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
