"""Exception hierarchy.

Each class carries the process exit code the command line maps it to.
"""


class DriftHurdleError(Exception):
    exit_code = 1


class UsageError(DriftHurdleError, ValueError):
    """Bad option, unknown key or malformed argument."""

    exit_code = 2


class InvalidArgument(UsageError):
    """A function argument violates its documented precondition."""


class DataError(DriftHurdleError, ValueError):
    """Input data is malformed or inconsistent."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateInput(DataError):
    pass


class NumericalError(DriftHurdleError, ArithmeticError):
    exit_code = 4


class FitError(NumericalError):
    """Optimisation failed; ``best`` holds the best iterate found, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
