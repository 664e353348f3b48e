"""Exception types raised across the package."""


class HodnError(Exception):
    """Base class for all package errors."""


class DimensionError(HodnError, ValueError):
    pass


class ShapeError(HodnError, ValueError):
    pass


class ParameterError(HodnError, ValueError):
    pass


class ConfigurationError(HodnError, ValueError):
    pass


class DeterminismError(HodnError, RuntimeError):
    pass


class CapacityError(HodnError, ValueError):
    pass


class DegenerateBoxError(HodnError, ValueError):
    pass


class ParseError(HodnError, ValueError):
    """Malformed text input. ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class FormatError(ParseError):
    """Well-formed text whose contents are inconsistent (e.g. dimensions)."""


class CorruptionError(HodnError, ValueError):
    pass


class CompatibilityError(HodnError, ValueError):
    def __init__(self, message, names=()):
        super().__init__(message)
        self.names = list(names)


class TrainingError(HodnError, RuntimeError):
    def __init__(self, message, step=None, terms=None):
        super().__init__(message)
        self.step = step
        self.terms = dict(terms or {})
