"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class KernelDistError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InvalidParameterError(KernelDistError, ValueError):
    """A parameter is outside its admissible range."""

    exit_code = 3


class DimensionMismatchError(InvalidParameterError):
    """Two inputs do not share a dimension."""


class UnsupportedDimensionError(InvalidParameterError):
    """The requested algorithm does not support this dimension."""


class BasisMismatchError(InvalidParameterError):
    """Two feature vectors were produced by different bases."""


class NumericalInstabilityError(KernelDistError, ArithmeticError):
    """Cancellation exceeded the documented floating tolerance."""

    exit_code = 4


class BudgetExceededError(KernelDistError, RuntimeError):
    """An enumeration would exceed its configured work budget."""

    exit_code = 5


class ParseError(KernelDistError, ValueError):
    """An input file could not be parsed.

    Args:
        message: human readable description.
        line: 1-based line number of the offending row, if known.
    """

    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
