"""Exception types raised across the package."""


class MonovelError(Exception):
    pass


class InvalidArgumentError(MonovelError, ValueError):
    pass


class HorizonDegenerateError(InvalidArgumentError):
    """Box bottom edge sits at or above the horizon row, so no ground point exists."""


class InvalidRegionError(InvalidArgumentError):
    pass


class ConfigurationError(MonovelError, ValueError):
    pass


class GenerationFailureError(MonovelError, RuntimeError):
    pass


class DatasetFormatError(MonovelError, IOError):
    def __init__(self, message, path=None):
        if path is not None:
            message = f"{message} [{path}]"
        super().__init__(message)
        self.path = path


class EmptyEvaluationError(MonovelError, ValueError):
    pass


class NonFiniteLossError(MonovelError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
