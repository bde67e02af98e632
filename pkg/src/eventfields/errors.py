"""Exception types shared across the package."""

from __future__ import annotations


class EventFieldsError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigurationError(EventFieldsError, ValueError):
    """A setting, shape spec, or precondition supplied by the caller is invalid."""


class DimensionError(EventFieldsError, ValueError):
    """An array or tensor has the wrong dimensionality for the operation."""


class ContractError(EventFieldsError, ValueError):
    """An internal invariant or API contract was violated."""


class EvaluationError(EventFieldsError, RuntimeError):
    """A numeric evaluation produced an unusable (e.g. non-finite) result."""


class StiffnessError(EventFieldsError, RuntimeError):
    """The adaptive solver's step size underflowed; carries the failing time."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class DomainError(EventFieldsError, ValueError):
    """A query point lies outside the region where a field/path is defined."""


class BoundViolationError(EventFieldsError, RuntimeError):
    """The thinning sampler observed an intensity above its stated bound."""


class DatasetFormatError(EventFieldsError, ValueError):
    """A dataset or checkpoint file is malformed; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line
