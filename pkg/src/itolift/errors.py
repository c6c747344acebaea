"""Exception types raised across the package."""


class LiftError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(LiftError, ValueError):
    pass


class InvalidInputError(LiftError, ValueError):
    pass


class NumericalError(LiftError, ArithmeticError):
    pass


class UndefinedMetricError(LiftError, ValueError):
    pass


class OptimizationFailedError(LiftError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
