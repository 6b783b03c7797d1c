"""Exception types raised across the package."""


class MonoplantError(Exception):
    """Base class for all package errors."""


class NonFiniteInputError(MonoplantError, ValueError):
    pass


class ShapeError(MonoplantError, ValueError):
    pass


class TraceError(MonoplantError, ValueError):
    pass


class DivergenceError(MonoplantError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SpecError(MonoplantError, ValueError):
    pass


class ConstructionError(MonoplantError, ValueError):
    pass


class ConfigError(MonoplantError, ValueError):
    pass


class FitError(MonoplantError, ValueError):
    pass


class DomainError(MonoplantError, ValueError):
    pass


class SurrogateError(MonoplantError, ArithmeticError):
    pass


class DegenerateWindowError(MonoplantError, ArithmeticError):
    """The local design matrix cannot identify a slope (not enough exploration)."""
