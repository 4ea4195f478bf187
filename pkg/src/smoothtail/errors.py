"""Exception types raised by the laboratory's operations."""


class SmoothtailError(Exception):
    """Base class for all package-specific failures."""


class NoTwoRoots(SmoothtailError):
    """Requested two-root lognormal family has no real root pair."""


class MellinDiverged(SmoothtailError):
    """Mellin function is infinite (or numerically divergent) at s."""


class NoFiniteWindow(SmoothtailError):
    """Mellin function is infinite everywhere on the scanned interval."""


class NotNormalized(SmoothtailError):
    """Tilting exponent does not satisfy m(alpha) = 1 within tolerance."""


class CensoringExcess(SmoothtailError):
    """Too many first-passage paths still running at the horizon cap."""


class ComplexityExceeded(SmoothtailError):
    """Exhaustive enumeration would exceed the term budget."""


class NotConverged(SmoothtailError):
    """Fixed-point iteration hit max_iter before the tolerance."""


class MonotonicityViolated(SmoothtailError):
    """Fixed-point iterates lost a monotonicity invariant."""


class GridTooNarrow(SmoothtailError):
    """Integrand has not decayed at the grid edges; widen the grid."""


class NoPlateau(SmoothtailError):
    """Tail-constant plateau spread exceeds the stability threshold."""


class DegenerateSample(SmoothtailError):
    """Sample has too few usable points for the requested estimate."""


class WindowEmpty(SmoothtailError):
    """Requested fitting window contains too few sample points."""
