"""Exception hierarchy for multi-experiment analysis."""

from __future__ import annotations

__all__ = [
    "MEAError",
    "ConfigError",
    "SchemaError",
    "DuplicateUnitError",
    "NonFiniteValueError",
    "EmptySupportError",
    "MissingCellError",
    "DegenerateBucketError",
    "CapExceededError",
    "ZeroDenominatorError",
    "InsufficientDataError",
    "WeightSumError",
]


class MEAError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MEAError, ValueError):
    """An analysis or simulation configuration breaks an invariant."""


class SchemaError(MEAError, ValueError):
    """Input data does not match the declared experiments and metrics."""


class DuplicateUnitError(SchemaError):
    """The same unit_id appears on more than one row."""


class NonFiniteValueError(MEAError, ValueError):
    """A metric value is missing, NaN or infinite."""


class EmptySupportError(MEAError):
    """The regions requested for weighting hold no units."""


class MissingCellError(MEAError):
    """A variant cell needed for a comparison has no units.

    ``regions`` lists the trigger states whose cells were empty.
    """

    def __init__(self, message: str, regions=()):
        super().__init__(message)
        self.regions = tuple(regions)


class DegenerateBucketError(MEAError):
    """A leave-one-bucket-out partition lost the support an estimator needs."""


class CapExceededError(MEAError):
    """More variant combinations than the configured cap."""


class ZeroDenominatorError(MEAError, ZeroDivisionError):
    """A ratio metric has a zero weighted denominator mean."""


class InsufficientDataError(MEAError):
    """A contingency table has fewer than two populated rows or columns."""


class WeightSumError(MEAError, ValueError):
    """Stratum weights do not sum to one."""
