class SliceSimError(Exception):
    """Base class for errors raised by slicesim."""


class ConfigError(SliceSimError, ValueError):
    """Invalid configuration or operation arguments.

    ``field`` names the offending parameter when one is known.
    """

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class CapacityError(SliceSimError, RuntimeError):
    """The cache cannot hold what was asked of it."""


class TraceFormatError(SliceSimError, ValueError):
    """Malformed trace file; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
