"""Exception hierarchy shared by all levylab modules."""


class LevylabError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LevylabError):
    """An input violates a documented invariant or precondition."""


class ConfigurationError(LevylabError):
    """A run configuration is inconsistent or exceeds resource caps."""


class RangeError(LevylabError):
    """A query lies outside the domain covered by the data."""


class QuadratureError(LevylabError):
    """Numerical integration failed to converge.

    Carries the last two successive estimates so callers can judge how far
    the refinement got.
    """

    def __init__(self, message, estimate=None, previous=None, tolerance=None):
        super().__init__(message)
        self.estimate = estimate
        self.previous = previous
        self.tolerance = tolerance


class SchemeStepError(LevylabError):
    """A simulation step cannot be carried out with the given parameters."""


class DegenerateStateError(LevylabError):
    """The scheme's transition law degenerates at the current state."""


class PotentialOverflowError(LevylabError):
    """An exponential-integral window overflows double precision."""


class ExpressionError(ValidationError):
    """The coefficient expression mini-language rejected its input."""
