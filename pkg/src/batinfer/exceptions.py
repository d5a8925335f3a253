"""Exception hierarchy shared by the library and the command-line front-end."""


class BatinferError(Exception):
    """Base class for all errors raised by batinfer."""


class ValidationError(BatinferError, ValueError):
    """Invalid user input: bad bounds, malformed config, mismatched shapes."""


class NumericalError(BatinferError, ArithmeticError):
    """A numerical procedure failed, e.g. a covariance that stays indefinite."""


class EvaluationError(BatinferError):
    """A forward-model evaluation failed or produced non-finite output."""
