"""Exception hierarchy.

``ValidationError`` covers bad inputs and configuration (CLI exit code 1);
``ComputeError`` covers numerical failures during a run (exit code 2).
"""


class FirmComplexityError(Exception):
    """Base class for all package errors."""

    module = "firmcomplexity"


class ValidationError(FirmComplexityError, ValueError):
    """Input data or configuration violates a documented invariant."""


class ComputeError(FirmComplexityError, ArithmeticError):
    """A numerical stage could not produce a defined result."""


class RankDeficientError(ComputeError):
    """Design matrix is not of full column rank."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
