"""Exception hierarchy.

Each class carries an ``exit_code`` used by the command-line runner.
"""


class CDEError(Exception):
    exit_code = 1


class ArgumentError(CDEError, ValueError):
    exit_code = 3


class InvalidStateError(CDEError):
    exit_code = 3


class OutOfSupportError(CDEError, ValueError):
    exit_code = 3


class NumericalError(CDEError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericalError):
    """Newton iterations did not reach the gradient tolerance."""

    def __init__(self, message, grad_norm=float("nan")):
        super().__init__(message)
        self.grad_norm = grad_norm


class FitError(NumericalError):
    """A region fit failed inside the sampler.

    Carries the iteration and the tessellation being evaluated.
    """

    def __init__(self, message, iteration=None, tessellation=None):
        super().__init__(message)
        self.iteration = iteration
        self.tessellation = tessellation


class DataError(CDEError):
    exit_code = 2


class UnreadableFileError(DataError):
    exit_code = 2


class MissingColumnError(DataError):
    exit_code = 3


class EmptyDataError(DataError):
    exit_code = 5
