"""Exception hierarchy shared by all freegauss modules."""


class FreeGaussError(Exception):
    """Base class for all freegauss errors."""


class ShapeError(FreeGaussError):
    """Matrix or vector dimensions violate an operation's contract."""


class NonFiniteError(FreeGaussError):
    """Input contains NaN or Inf entries."""


class NoConvergenceError(FreeGaussError):
    """An iterative solver failed to converge."""


class NotSymmetricError(FreeGaussError):
    """Matrix is not symmetric within tolerance."""


class CoalescedAtomsError(FreeGaussError):
    """A discrete measure has a zero pairwise gap (log-energy undefined)."""


class NonPositiveAtomError(FreeGaussError):
    """A functional requiring strictly positive atoms received one <= 0."""


class CoalescedSingularValuesError(FreeGaussError):
    """Two squared singular values are closer than the gap floor."""


class ZeroSingularValueError(FreeGaussError):
    """A singular value is zero (or below the numerical floor)."""


class DegenerateSampleError(FreeGaussError):
    """Sample has zero variance where standardization was requested."""


class TapeError(FreeGaussError):
    """A backward pass received a stale, consumed, or mismatched tape."""


class ParseError(FreeGaussError):
    """A config or data file failed to parse; message carries location."""


class UnknownKeyError(FreeGaussError):
    """Config contains a key outside the known schema."""


class ConstraintViolationError(FreeGaussError):
    """Resolved config violates a cross-field constraint (e.g. d >= b)."""
