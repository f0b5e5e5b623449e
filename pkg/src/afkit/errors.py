"""Exception types shared across the toolkit."""


class AfkitError(ValueError):
    """Base class for all domain errors raised by this package."""


class LengthError(AfkitError):
    """Input series is too short for the requested operation."""


class ShapeError(AfkitError):
    """Mismatched array shapes or channel counts."""


class NormalizationError(AfkitError):
    """Series cannot be normalized to a probability distribution."""


class InsufficientPeaksError(AfkitError):
    """Fewer peaks than the operation needs."""


class InsufficientDataError(AfkitError):
    """Not enough intervals / samples to compute the quantity."""


class UndefinedCorrelationError(AfkitError):
    """Pearson correlation requested on a constant input."""


class DomainError(AfkitError):
    """Parameter outside its valid domain."""


class DegenerateTrainingError(AfkitError):
    """Training set does not contain both classes."""
