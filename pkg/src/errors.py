from typing import Optional


class L1PcaError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(L1PcaError, ValueError):
    """A value is outside its documented domain (non-finite entry, bad parameter)."""


class ShapeError(L1PcaError, ValueError):
    """Matrix shapes are incompatible with the requested operation."""


class DegenerateIterate(L1PcaError):
    """The polar-decomposition input of a solver step is exactly zero.

    Raised when every sample is orthogonal to every column of the current
    iterate. When raised from a solver run, ``trace`` holds the records
    produced before the failure.
    """

    def __init__(self, message: str, k: int = 0, trace=None):
        super().__init__(message)
        self.k = k
        self.trace = trace


class TooLarge(L1PcaError):
    """An exhaustive enumeration would exceed its configured limit."""


class DegenerateInstance(L1PcaError):
    """The instance carries no nonzero projection to measure."""


class NotEnoughData(L1PcaError):
    """A trace is too short for the requested statistic."""


class ParseError(L1PcaError, ValueError):
    """A data file could not be parsed.

    Args:
        message: Description of the problem
        row: 1-based line number in the file, if known
        column: 1-based field number within the line, if known
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        location = ""
        if row is not None:
            location = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + location)
        self.row = row
        self.column = column
