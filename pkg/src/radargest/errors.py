"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the taxonomy small:
ValidationError for bad values/shapes/configs, FormatError for unreadable
or version-mismatched binary containers.
"""


class RadarGestError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(RadarGestError, ValueError):
    """Invalid argument, configuration value, or tensor shape."""


class FormatError(RadarGestError, ValueError):
    """Malformed binary container: bad magic, truncation, or wrong version."""
