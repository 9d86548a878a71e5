"""Shared geometry and model ingredients.

Staggered radial grids, the compactly supported potential well, the slow
switching profile, and two-component spinor arithmetic. Units are natural
(hbar = m = c = 1), so lengths are Compton lengths and the free spectrum
is the pair of continua (-inf, -1] and [1, inf).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "RadialGrid",
    "PotentialSpec",
    "SwitchingProfile",
    "Spinor",
    "make_grid",
    "eval_potential",
    "eval_switching",
    "inner",
    "smoothstep",
    "smooth_window",
    "spinor_nbytes",
]

POTENTIAL_SHAPES = ("smooth-bump", "cosine-well")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Staggered half-line grid.

    The upper spinor component lives on r = (j + 1/2) h, the lower one on
    r = (j + 1) h, j = 0 .. N-1. Interleaving the two families gives the
    2N-point node vector that the banded operators act on.
    """

    L: float
    N: int
    h: float
    upper_nodes: np.ndarray
    lower_nodes: np.ndarray

    @cached_property
    def nodes(self) -> np.ndarray:
        out = np.empty(2 * self.N)
        out[0::2] = self.upper_nodes
        out[1::2] = self.lower_nodes
        return out


def make_grid(L: float, N: int) -> RadialGrid:
    """Build the staggered radial grid with spacing h = L/N.

    N must be at least 16 and L positive and finite; node placement is
    deterministic given (L, N).
    """
    if not np.isfinite(L) or L <= 0:
        raise ValueError(f"box length must be positive and finite, got {L!r}")
    N = int(N)
    if N < 16:
        raise ValueError(f"need at least 16 nodes, got {N}")
    h = L / N
    j = np.arange(N, dtype=float)
    return RadialGrid(L=float(L), N=N, h=h,
                      upper_nodes=(j + 0.5) * h, lower_nodes=(j + 1.0) * h)


def spinor_nbytes(grid: RadialGrid) -> int:
    """Memory footprint of one complex two-component state on this grid."""
    return 2 * grid.N * np.dtype(complex).itemsize


@dataclass
class PotentialSpec:
    """Compactly supported radial well, zero for r >= radius.

    rescale_factor is set by critical-coupling calibration so that unit
    coupling is critical; it multiplies the shape everywhere.
    """

    amplitude: float
    radius: float
    shape: str = "smooth-bump"
    rescale_factor: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("potential amplitude must be nonnegative")
        if self.radius <= 0:
            raise ValueError("potential radius must be positive")
        if self.shape not in POTENTIAL_SHAPES:
            raise ValueError(
                f"unknown potential shape {self.shape!r}; "
                f"choose one of {POTENTIAL_SHAPES}")


def eval_potential(spec: PotentialSpec, r):
    """Evaluate the well at radius r (scalar or array), r >= 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    x = r / spec.radius
    inside = x < 1.0
    out = np.zeros_like(r)
    if spec.shape == "smooth-bump":
        # exp(1 - 1/(1 - x^2)) on the interior; all derivatives vanish at x=1
        xs = np.where(inside, x, 0.0)
        out = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - xs * xs)), 0.0)
    else:  # cosine-well, C^1 at the edge
        out = np.where(inside, np.cos(0.5 * np.pi * x) ** 2, 0.0)
    out = spec.amplitude * spec.rescale_factor * out
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SwitchingProfile:
    """Raised sine-squared coupling pulse in macroscopic time.

    The pulse is shifted so that the upward crossing of coupling 1 lands
    exactly at s = 0; the effective support is therefore the nominal
    window translated by crossing_shift.
    """

    s_i: float
    s_f: float
    mu_max: float
    crossing_shift: float = field(init=False)

    def __post_init__(self):
        if not self.s_f > self.s_i:
            raise ValueError("profile window must satisfy s_f > s_i")
        if not self.mu_max > 1.0:
            raise ValueError("mu_max must exceed 1 for an upward crossing to exist")
        shift = self.s_i + (self.s_f - self.s_i) / np.pi * np.arcsin(
            1.0 / np.sqrt(self.mu_max))
        object.__setattr__(self, "crossing_shift", shift)

    @property
    def support(self) -> tuple[float, float]:
        return (self.s_i - self.crossing_shift, self.s_f - self.crossing_shift)

    @property
    def slope_at_crossing(self) -> float:
        return 2.0 * np.pi / (self.s_f - self.s_i) * np.sqrt(self.mu_max - 1.0)

    @property
    def downward_crossing(self) -> float:
        """The s > 0 where the coupling falls back through 1."""
        lo, hi = self.support
        return lo + hi  # pulse is symmetric about its midpoint


def eval_switching(profile: SwitchingProfile, s):
    """Coupling mu(s); zero outside the effective support."""
    s = np.asarray(s, dtype=float)
    u = s + profile.crossing_shift
    w = profile.s_f - profile.s_i
    phase = np.pi * (u - profile.s_i) / w
    val = profile.mu_max * np.sin(phase) ** 2
    out = np.where((u > profile.s_i) & (u < profile.s_f), val, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class Spinor:
    """Two-component complex state on a staggered radial grid."""

    upper: np.ndarray
    lower: np.ndarray
    grid: RadialGrid

    def __post_init__(self):
        if self.upper.shape != (self.grid.N,) or self.lower.shape != (self.grid.N,):
            raise ValueError("component length must match the grid")

    def norm(self) -> float:
        h = self.grid.h
        return float(np.sqrt(h * (np.vdot(self.upper, self.upper).real
                                  + np.vdot(self.lower, self.lower).real)))

    def to_interleaved(self) -> np.ndarray:
        out = np.empty(2 * self.grid.N, dtype=complex)
        out[0::2] = self.upper
        out[1::2] = self.lower
        return out

    @classmethod
    def from_interleaved(cls, grid: RadialGrid, vec: np.ndarray) -> "Spinor":
        vec = np.asarray(vec)
        if vec.shape != (2 * grid.N,):
            raise ValueError("interleaved vector length must be 2 N")
        return cls(upper=vec[0::2].astype(complex), lower=vec[1::2].astype(complex),
                   grid=grid)

    def copy(self) -> "Spinor":
        return Spinor(self.upper.copy(), self.lower.copy(), self.grid)


def inner(a: Spinor, b: Spinor) -> complex:
    """h-weighted inner product, conjugate-linear in the first slot."""
    h = a.grid.h
    return complex(h * (np.vdot(a.upper, b.upper) + np.vdot(a.lower, b.lower)))


def smoothstep(u):
    """C-infinity ramp: 0 for u <= 0, 1 for u >= 1, strictly rising between."""
    u = np.asarray(u, dtype=float)
    uc = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(uc > 0.0, np.exp(-1.0 / np.where(uc > 0.0, uc, 1.0)), 0.0)
        b = np.where(uc < 1.0, np.exp(-1.0 / np.where(uc < 1.0, 1.0 - uc, 1.0)), 0.0)
    out = a / (a + b)
    return float(out) if out.ndim == 0 else out


def smooth_window(r, inner_radius: float, outer_radius: float):
    """Smooth spatial cutoff: identically 1 up to inner_radius, 0 beyond outer_radius."""
    if not outer_radius > inner_radius:
        raise ValueError("outer radius must exceed inner radius")
    r = np.asarray(r, dtype=float)
    return 1.0 - smoothstep((r - inner_radius) / (outer_radius - inner_radius))
