"""Exception hierarchy shared across the package."""


class PoisonRidgeError(Exception):
    """Base class for all library errors."""


# --- Marchenko-Pastur transforms ---

class NonNegativeZ(PoisonRidgeError):
    """Evaluation point z must be strictly negative."""


class NumericalBranchFailure(PoisonRidgeError):
    """The square-root branch produced a non-positive transform value."""


class SingularDerivativeDenominator(PoisonRidgeError):
    """Implicit-differentiation denominator vanished (cannot occur for z < 0)."""


# --- closed-form predictions ---

class InvalidLambda(PoisonRidgeError):
    """Ridge penalty must be strictly positive for the regularized formulas."""


class NegativeVariance(PoisonRidgeError):
    """Computed variance is negative beyond floating-point tolerance."""


class InterpolationThreshold(PoisonRidgeError):
    """Ridgeless variance diverges for aspect ratio c >= 1."""


class ThetaOutOfRange(PoisonRidgeError):
    """Poison fraction must lie in [0, 1]."""


# --- simulator ---

class NonPositiveLambda(PoisonRidgeError):
    """The ridge solver requires lambda > 0."""


class SolveFailure(PoisonRidgeError):
    """Symmetric factorization failed or the solution residual is too large."""


# --- low-rank updates ---

class InnerSingular(PoisonRidgeError):
    """The small inner matrix of the low-rank update is numerically singular."""


# --- MNIST / IDX ---

class BadMagic(PoisonRidgeError):
    """IDX header magic does not match the expected value."""


class TruncatedFile(PoisonRidgeError):
    """IDX byte stream ends before the header or payload is complete."""


class CountMismatch(PoisonRidgeError):
    """Image and label files disagree on the sample count."""


class NoSamplesForDigit(PoisonRidgeError):
    """Requested digit is absent from the label file."""


class PatchOutOfBounds(PoisonRidgeError):
    """Trigger patch does not fit inside the image."""


class SubsampleTooLarge(PoisonRidgeError):
    """Requested subsample exceeds the available sample count."""


# --- sweep / report ---

class EmptyGroup(PoisonRidgeError):
    """Aggregation requires at least one valid record per grid point."""


class SchemaMismatch(PoisonRidgeError):
    """Input CSV does not carry the expected sweep-record columns."""
