"""Exception types shared across the package."""


class JfbarError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(JfbarError, ValueError):
    """An input violates a documented precondition."""


class ValidationError(InvalidArgumentError):
    """A dataset or configuration file failed schema validation."""


class NumericError(JfbarError, ArithmeticError):
    """A numerical routine failed (non-finite values, singular systems, ...)."""

    def __init__(self, message: str, last_iterate=None, **context):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.context = context


class ConvergenceError(NumericError):
    """An iterative procedure stopped without meeting its criterion."""
