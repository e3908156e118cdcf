"""Exception hierarchy shared by every xdistill module."""


class XDistillError(Exception):
    """Base class for all library errors."""


class DimensionError(XDistillError, ValueError):
    """Raised when tensor shapes or geometries are incompatible."""


class ParameterError(XDistillError, ValueError):
    """Raised when a numeric argument is outside its valid range."""


class UsageError(XDistillError, ValueError):
    """Raised when an API is called in a way its contract forbids."""


class ValidationError(XDistillError, ValueError):
    """Raised when input data fails a content check."""


class SamplingError(XDistillError, RuntimeError):
    pass


class UnsupportedArchitectureError(XDistillError, TypeError):
    pass


class InvariantViolation(XDistillError, RuntimeError):
    """An internal guarantee was broken; the run must abort."""


class SingularSystemError(XDistillError, RuntimeError):
    def __init__(self, message, condition_number):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class FormatError(XDistillError, ValueError):
    """A binary or text file could not be decoded.

    ``offset`` is the byte offset (or line number for text formats) where
    decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)
        self.offset = offset


class ConfigError(XDistillError, ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line


class DivergenceError(XDistillError, RuntimeError):
    """Training produced a non-finite loss.

    ``model`` holds the weights restored from the last finite epoch.
    """

    def __init__(self, message, model=None, epoch=None):
        super().__init__(message)
        self.model = model
        self.epoch = epoch
