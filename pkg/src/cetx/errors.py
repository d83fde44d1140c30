"""Exception hierarchy for cetx.

Everything derives from :class:`CetxError` so callers can catch the whole
family.  Most classes also subclass ``ValueError`` because they signal bad
inputs rather than internal failures.
"""

from __future__ import annotations


class CetxError(Exception):
    """Base class for all cetx errors."""


class SchemaError(CetxError, ValueError):
    """A CSV file does not contain the requested columns."""


class ParseError(CetxError, ValueError):
    """A CSV cell could not be parsed; the message names the data row."""


class LengthError(CetxError, ValueError):
    """A series (or file) is too short to be usable."""


class DomainError(CetxError, ValueError):
    """An argument is outside its documented domain."""


class DegenerateSeriesError(CetxError, ValueError):
    """A series has zero variance and cannot be standardized."""


class ArityError(CetxError, ValueError):
    """A feature vector has the wrong length for the model's lag orders."""


class SingularDesignError(CetxError, ValueError):
    """The least-squares design matrix is rank deficient."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class TrainingDivergenceError(CetxError, RuntimeError):
    """Training loss became non-finite; advises a smaller learning rate."""


class RolloutDivergenceError(CetxError, RuntimeError):
    """A recursive forecast became non-finite at a known step."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class SolveDivergenceError(CetxError, RuntimeError):
    """Counterfactual optimization diverged; carries the objective trace."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


class NumericError(CetxError, ArithmeticError):
    """A non-finite value appeared inside a computation graph node."""


class UnsupportedConfigurationError(CetxError, ValueError):
    """The closed-form solver does not cover this model/problem shape."""


class SingularSystemError(CetxError, ValueError):
    """The ridge system is singular; suggests using a positive penalty."""
