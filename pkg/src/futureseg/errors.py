class FutureSegError(Exception):
    pass


class FormatError(FutureSegError):
    """Malformed file contents (bad magic, truncated payload, bad header)."""


class ShapeError(FutureSegError, ValueError):
    """Grids or sequences whose shapes/lengths do not agree."""


class ConfigError(FutureSegError, ValueError):
    """Invalid configuration, missing checkpoint, empty dataset."""


class IoError(FutureSegError, OSError):
    pass
