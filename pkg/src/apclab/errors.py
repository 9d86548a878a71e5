"""Exception types shared across the package.

Every failure mode that callers are expected to catch has its own class;
generic ValueError is reserved for malformed arguments.
"""


class ApcLabError(Exception):
    """Base class for all package-specific failures."""


class NoCriticalCoupling(ApcLabError):
    """The coupling scan never pushed the bound state to the upper gap edge."""


class DegenerateEdge(ApcLabError):
    """Two bound-state curves reached the gap edge together.

    The single-channel machinery assumes a nondegenerate edge crossing;
    this error fires instead of silently picking one curve.
    """


class PhaseAlignmentFailure(ApcLabError):
    """Adjacent eigenvectors overlap too weakly to fix a consistent sign."""


class SolveFailure(ApcLabError):
    """A shifted linear solve hit a (near-)singular matrix.

    Usually the probe energy collided with a discrete eigenvalue of the
    operator; refining the grid moves the spurious level away.
    """


class MatchFailure(ApcLabError):
    """The free-solution pair degenerated while matching at the well edge."""


class FitDiverged(ApcLabError):
    """A nonlinear fit ended with relative residual above its gate."""


class BudgetExceeded(ApcLabError):
    """A dense decomposition was requested beyond the allowed matrix size."""


class BoxTooSmall(ApcLabError):
    """The box cannot contain the light cone of the requested evolution."""


class OrderTooLow(ApcLabError):
    """A rational approximation order misses the accuracy target."""


class NoDecayBeforeDowncrossing(ApcLabError):
    """Region mass never reached half its initial value in time."""


class WindowBeforeThreshold(ApcLabError):
    """A fit window starts before the asymptotic regime can hold."""


class ConfigError(ApcLabError):
    """A run configuration failed validation before any compute started."""
