# File: errors.py

"""Exception types shared by the library and the command line front end."""

__all__ = [
    "FourPlaneError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "NumericError",
]


class FourPlaneError(Exception):
    """Base class for every error raised on purpose by this package."""


class ShapeError(FourPlaneError, ValueError):
    """Extents, channel counts or sequence lengths do not line up."""


class ConfigError(FourPlaneError, ValueError):
    """A configuration value or flag combination is invalid."""


class DataError(FourPlaneError):
    """A manifest, tensor file, checkpoint or run directory is missing or corrupt."""


class NumericError(FourPlaneError, RuntimeError):
    """A loss or input became non-finite."""
