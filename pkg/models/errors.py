class ChiCapacityError(Exception):
    """Base class for all errors raised by the capacity lab."""


class InvalidInputError(ChiCapacityError, ValueError):
    """Input failed validation (shape, hermiticity, positivity, trace, feasibility)."""


class ConsistencyError(ChiCapacityError, RuntimeError):
    """Two evaluation paths of the same quantity disagree."""

    def __init__(self, message: str, discrepancy: float = float('nan')):
        super().__init__(message)
        self.discrepancy = discrepancy


class SupportVerificationError(ChiCapacityError):
    """A supporting linear constraint could not be verified a posteriori."""

    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class UnsupportedOperationError(ChiCapacityError):
    """Requested operation lies outside the supported desk-scale range."""
