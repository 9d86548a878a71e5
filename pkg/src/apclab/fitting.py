"""Log-log power-law fitting with explicit windows and flags."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = ["ScalingFit", "fit_loglog"]


@dataclass
class ScalingFit:
    """A fitted power law y ~ C * x^slope on a stated window.

    abscissa/ordinate keep the points the fit actually used. The slope
    interval is the 95% band from the linear regression in log10-log10
    coordinates; residual_rms is quoted in log10 units. flags carries
    human-readable notes about excluded points.
    """

    abscissa: np.ndarray
    ordinate: np.ndarray
    slope: float
    intercept: float
    slope_ci: tuple
    residual_rms: float
    window: tuple
    flags: tuple = field(default=())

    @property
    def n_points(self) -> int:
        return len(self.abscissa)

    @property
    def prefactor(self) -> float:
        """C in y = C * x^slope."""
        return 10.0 ** self.intercept


def fit_loglog(x, y, window=None, flags=()) -> ScalingFit:
    """Least-squares power-law fit of y against x.

    window is an (x_min, x_max) pair restricting which points enter; points
    outside are dropped, not extrapolated. At least 4 points must survive.
    All used values must be positive.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1d arrays of equal length")
    keep = np.isfinite(x) & np.isfinite(y)
    if window is not None:
        lo, hi = window
        if not lo < hi:
            raise ValueError(f"empty fit window {window!r}")
        keep &= (x >= lo) & (x <= hi)
    x, y = x[keep], y[keep]
    if len(x) < 4:
        raise ValueError(f"need at least 4 points to fit, have {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data")
    lx, ly = np.log10(x), np.log10(y)
    res = stats.linregress(lx, ly)
    tval = stats.t.ppf(0.975, len(x) - 2) if len(x) > 2 else np.inf
    ci = (res.slope - tval * res.stderr, res.slope + tval * res.stderr)
    rms = float(np.sqrt(np.mean((ly - res.slope * lx - res.intercept) ** 2)))
    return ScalingFit(
        abscissa=x, ordinate=y,
        slope=float(res.slope), intercept=float(res.intercept),
        slope_ci=(float(ci[0]), float(ci[1])),
        residual_rms=rms,
        window=(float(x.min()), float(x.max())),
        flags=tuple(flags))
