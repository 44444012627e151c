"""Exception and warning types shared across the package."""


class CloudcastError(Exception):
    """Base class for all package-specific errors."""


class PoleError(CloudcastError):
    """Latitude too close to a pole for the planar map to be valid."""


class ShapeMismatch(CloudcastError):
    """Array shapes of two rasters/fields do not agree."""


class DomainMismatch(CloudcastError):
    """Raster and mesh do not cover the same planar domain."""


class FormatError(CloudcastError):
    """File has an unknown magic string or version."""


class DimensionError(CloudcastError):
    """Declared dimensions do not match the payload."""


class NonPositiveSigma(CloudcastError):
    """Log-transform threshold must be positive."""


class EmptyGrid(CloudcastError):
    """Operation requires at least one usable (finite) pixel."""


class ZeroMedian(CloudcastError):
    """Median equalization impossible: reference median is zero or absent."""


class TooSmall(CloudcastError):
    """Pyramid decimation would drop below the minimum image size."""


class SingularSystem(CloudcastError):
    """A linear system that should be regular failed to solve."""


class InvalidOrder(CloudcastError):
    """Unsupported polynomial order or element count."""


class BlowUp(CloudcastError):
    """Advected field exceeded the stability guard; scheme went unstable."""


class UnknownScenario(CloudcastError):
    """Synthetic scenario id not recognized."""


class AlignmentError(CloudcastError):
    """Timestamps of truth and forecast sequences do not line up."""


class ZeroDenominator(CloudcastError):
    """rMAPE denominator vanished on the evaluation set."""


class LineSearchFailure(CloudcastError):
    """Wolfe line search could not make progress (also recorded in FitReport)."""


class UsageError(CloudcastError):
    """Bad command-line arguments or configuration."""


class NonConvergenceWarning(UserWarning):
    """Inner solver budget exhausted before reaching its tolerance."""
