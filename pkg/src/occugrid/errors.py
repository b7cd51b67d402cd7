"""Exception types raised by occugrid."""


class OccugridError(Exception):
    """Base class for all library errors."""


class CalibrationError(OccugridError, ValueError):
    """Malformed or inconsistent calibration."""


class FormatError(OccugridError, ValueError):
    """Malformed binary or text input (point clouds, OCC3 files)."""


class ConfigError(OccugridError, ValueError):
    """Invalid configuration values."""


class UnsupportedSpaceError(OccugridError, ValueError):
    """Operation requested on a grid living in the wrong space."""
