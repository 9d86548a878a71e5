"""Banded operators, gap spectra, criticality, and the coupling scans.

The radial operator on the staggered grid is a real symmetric tridiagonal
matrix; interleaving upper and lower components puts the first-order
derivative couplings on the single off-diagonal. All spectral queries go
through LAPACK's tridiagonal drivers, and the critical-coupling search
uses vectorized Sturm counts so it never diagonalizes inside the loop.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import PotentialSpec, RadialGrid, Spinor, eval_potential
from .errors import (
    DegenerateEdge,
    NoCriticalCoupling,
    PhaseAlignmentFailure,
    SolveFailure,
)
from .fitting import ScalingFit, fit_loglog

__all__ = [
    "DiscreteOperator",
    "BoundState",
    "CurveTable",
    "assemble_operator",
    "gap_eigenpairs",
    "find_critical_coupling",
    "bound_state_curve",
    "derivative_of_bound_state_scan",
    "resolvent_norm_scan",
    "align_phase",
]


@dataclass
class DiscreteOperator:
    """Symmetric tridiagonal realization of the coupled radial system.

    diag = free_diag + mu * coupling_diag, where coupling_diag holds the
    well evaluated on the interleaved nodes (rescale factor included).
    """

    grid: RadialGrid
    mu: float
    kappa: float
    free_diag: np.ndarray
    coupling_diag: np.ndarray
    offdiag: np.ndarray
    diag: np.ndarray = field(init=False)

    def __post_init__(self):
        self.diag = self.free_diag + self.mu * self.coupling_diag

    def apply(self, vec: np.ndarray) -> np.ndarray:
        out = self.diag * vec
        out[:-1] = out[:-1] + self.offdiag * vec[1:]
        out[1:] = out[1:] + self.offdiag * vec[:-1]
        return out

    def dense(self) -> np.ndarray:
        n = len(self.diag)
        M = np.zeros((n, n))
        M[np.arange(n), np.arange(n)] = self.diag
        idx = np.arange(n - 1)
        M[idx, idx + 1] = self.offdiag
        M[idx + 1, idx] = self.offdiag
        return M

    def norm_bound(self) -> float:
        """Gershgorin bound on the spectral radius."""
        e = np.abs(self.offdiag)
        row = np.abs(self.diag).copy()
        row[:-1] += e
        row[1:] += e
        return float(np.max(row))


@dataclass
class BoundState:
    """One normalized gap eigenpair of a DiscreteOperator."""

    energy: float
    state: Spinor
    mu: float
    residual: float


@dataclass
class CurveTable:
    """Tabulated gap-state energy against coupling.

    Rows exist only where a gap state was found; mu_B is the smallest
    tabulated coupling carrying one, or None when the range has no state.
    """

    mus: np.ndarray
    energies: np.ndarray
    slopes: np.ndarray
    mu_B: float | None


def assemble_operator(grid: RadialGrid, potential: PotentialSpec,
                      mu: float, kappa: float = 1.0) -> DiscreteOperator:
    """Build the banded operator at coupling mu.

    The upper component sits on r = (j+1/2)h and the lower on r = (j+1)h;
    the centered difference between neighbouring staggered nodes plus the
    kappa/r channel term fills the off-diagonal. Assembly is deterministic,
    so equal inputs give bit-identical arrays.
    """
    if mu < 0:
        raise ValueError(f"coupling must be nonnegative, got {mu}")
    h = grid.h
    x = grid.upper_nodes
    n = 2 * grid.N
    free = np.empty(n)
    free[0::2] = 1.0
    free[1::2] = -1.0
    coup = eval_potential(potential, grid.nodes)
    off = np.empty(n - 1)
    off[0::2] = -1.0 / h + kappa / (2.0 * x)
    off[1::2] = 1.0 / h + kappa / (2.0 * x[1:])
    return DiscreteOperator(grid=grid, mu=float(mu), kappa=float(kappa),
                            free_diag=free, coupling_diag=coup, offdiag=off)


def _tri_apply(diag, off, vec):
    out = diag * vec
    out[:-1] = out[:-1] + off * vec[1:]
    out[1:] = out[1:] + off * vec[:-1]
    return out


def _refine_pair(diag, off, energy, vec, h):
    """Inverse-iteration polish of one tridiagonal eigenpair."""
    n = len(diag)
    scale = np.max(np.abs(diag)) + 2.0 * np.max(np.abs(off))
    vec = vec / np.sqrt(h * np.dot(vec, vec))
    for _ in range(4):
        r = _tri_apply(diag, off, vec) - energy * vec
        resid = np.sqrt(h * np.dot(r, r))
        if resid <= 1e-10:
            break
        ab = np.zeros((3, n))
        ab[0, 1:] = off
        ab[1] = diag - (energy + 1e-14 * scale)
        ab[2, :-1] = off
        try:
            y = sla.solve_banded((1, 1), ab, vec)
        except np.linalg.LinAlgError:
            break
        vec = y / np.sqrt(h * np.dot(y, y))
        energy = h * np.dot(vec, _tri_apply(diag, off, vec))
        r = _tri_apply(diag, off, vec) - energy * vec
        resid = np.sqrt(h * np.dot(r, r))
    # deterministic sign: largest-magnitude entry points up
    k = int(np.argmax(np.abs(vec)))
    if vec[k] < 0:
        vec = -vec
    return float(energy), vec, float(resid)


def gap_eigenpairs(op: DiscreteOperator, tol_edge: float | None = None):
    """All eigenpairs strictly inside the spectral gap.

    States within tol_edge (default 5 h^2) of either edge are treated as
    continuum and skipped. Each returned pair is polished by inverse
    iteration; more than one hit is reported with a warning because the
    single-channel assumptions expect a lone curve.
    """
    if tol_edge is None:
        tol_edge = 5.0 * op.grid.h ** 2
    h = op.grid.h
    w, v = sla.eigh_tridiagonal(
        op.diag, op.offdiag, select="v",
        select_range=(-1.0 + tol_edge, 1.0 - tol_edge))
    out = []
    for i in range(len(w)):
        energy, vec, resid = _refine_pair(op.diag, op.offdiag, w[i], v[:, i], h)
        out.append(BoundState(energy=energy,
                              state=Spinor.from_interleaved(op.grid, vec),
                              mu=op.mu, residual=resid))
    out.sort(key=lambda b: b.energy)
    if len(out) > 1:
        warnings.warn(
            f"{len(out)} gap states found; the single-channel setup expects "
            "at most one", UserWarning, stacklevel=2)
    return out


def _top_gap_state(op: DiscreteOperator):
    """Highest gap eigenpair regardless of edge proximity, or None."""
    w, v = sla.eigh_tridiagonal(
        op.diag, op.offdiag, select="v",
        select_range=(-1.0 + 1e-12, 1.0 - 1e-12))
    if len(w) == 0:
        return None
    energy, vec, _ = _refine_pair(op.diag, op.offdiag, w[-1], v[:, -1],
                                  op.grid.h)
    return energy, vec


def _count_above(free_diag, coupling_diag, off2, mus, x):
    """Number of eigenvalues above x for each coupling in mus.

    Sturm / LDL^T sign count on the shifted tridiagonal, vectorized over
    the coupling axis.
    """
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    q = free_diag[0] + mus * coupling_diag[0] - x
    below = (q < 0).astype(np.int64)
    for i in range(1, len(free_diag)):
        q = free_diag[i] + mus * coupling_diag[i] - x - off2[i - 1] / q
        q = np.where(np.abs(q) < 1e-300, -1e-300, q)
        below += q < 0
    return len(free_diag) - below


def find_critical_coupling(grid: RadialGrid, potential: PotentialSpec,
                           tol: float = 1e-6, edge_margin: float | None = None,
                           mu_scan_max: float = 8.0) -> float:
    """Coupling at which the bound state reaches the upper gap edge.

    Bisects the coupling until the gap energy sits at 1 - edge_margin
    (default margin 10 h^2, the discretization floor) within tol. On
    success the potential's rescale_factor is multiplied by the result, so
    unit coupling is critical from then on. The returned value is relative
    to the potential as passed in.
    """
    if edge_margin is None:
        edge_margin = 10.0 * grid.h ** 2
    if not 0 < edge_margin < 0.5:
        raise ValueError(f"edge margin {edge_margin} out of range")
    op = assemble_operator(grid, potential, 1.0)
    off2 = op.offdiag ** 2
    target = 1.0 - edge_margin
    base = int(_count_above(op.free_diag, op.coupling_diag, off2, 0.0, target)[0])
    lo, hi = 0.0, float(mu_scan_max)
    for sweep in range(4):
        mus = np.linspace(lo, hi, 65)
        counts = _count_above(op.free_diag, op.coupling_diag, off2, mus, target)
        above = np.nonzero(counts > base)[0]
        if len(above) == 0:
            if sweep == 0:
                raise NoCriticalCoupling(
                    f"no coupling up to {mu_scan_max} pushes the bound state "
                    f"to E = {target}")
            break
        hi = mus[above[0]]
        lo = mus[max(above[0] - 1, 0)]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        c = int(_count_above(op.free_diag, op.coupling_diag, off2, mid,
                             target)[0])
        if c > base:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    jump = int(_count_above(op.free_diag, op.coupling_diag, off2, hi, target)[0]
               - _count_above(op.free_diag, op.coupling_diag, off2, lo,
                              target)[0])
    if jump > 1:
        raise DegenerateEdge(
            f"{jump} levels cross the edge together at coupling ~{hi:.6f}")
    mu_c = 0.5 * (lo + hi)
    top = _top_gap_state(assemble_operator(grid, potential, mu_c))
    if top is None or abs(top[0] - target) > tol:
        raise NoCriticalCoupling(
            f"bisection landed at coupling {mu_c} but the gap energy misses "
            f"the target by more than {tol}")
    potential.rescale_factor *= mu_c
    return mu_c


def bound_state_curve(grid: RadialGrid, potential: PotentialSpec,
                      mu_lo: float, mu_hi: float, steps: int) -> CurveTable:
    """Tabulate the highest gap energy over a coupling range.

    Couplings without a state contribute no row. Slopes come from centered
    differences on the tabulated points (one-sided at the ends).
    """
    if not mu_lo < mu_hi:
        raise ValueError("coupling range must be increasing")
    mus_all = np.linspace(mu_lo, mu_hi, int(steps))
    kept, energies = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for mu in mus_all:
            states = gap_eigenpairs(assemble_operator(grid, potential, mu))
            if states:
                kept.append(mu)
                energies.append(states[-1].energy)
    kept = np.asarray(kept)
    energies = np.asarray(energies)
    slopes = (np.gradient(energies, kept) if len(kept) > 1
              else np.zeros_like(energies))
    mu_B = float(kept[0]) if len(kept) else None
    return CurveTable(mus=kept, energies=energies, slopes=slopes, mu_B=mu_B)


def align_phase(reference: np.ndarray, vec: np.ndarray, h: float) -> np.ndarray:
    """Flip vec so its overlap with reference is positive.

    Both inputs are unit vectors in the h-weighted norm. An overlap below
    0.5 in magnitude means the pair cannot belong to a continuous
    eigenpath, so no sign choice is meaningful.
    """
    ov = h * np.dot(reference, vec)
    if abs(ov) < 0.5:
        raise PhaseAlignmentFailure(
            f"adjacent eigenvectors overlap at {abs(ov):.3f}; "
            "reduce the coupling step")
    return vec if ov > 0 else -vec


def derivative_of_bound_state_scan(grid: RadialGrid, potential: PotentialSpec,
                                   mu_list, delta_mu: float) -> ScalingFit:
    """Difference-quotient growth of the bound state toward criticality.

    Expects a calibrated potential (unit coupling critical). For each mu
    the quotient |state(mu+delta) - state(mu)| / delta is measured with
    sign-aligned eigenvectors and fitted against 1 - mu in log-log
    coordinates. The fitted slope is negative; its magnitude is the
    growth exponent.
    """
    mu_list = np.asarray(mu_list, dtype=float)
    if delta_mu <= 0:
        raise ValueError("coupling step must be positive")
    if np.any(mu_list + delta_mu >= 1.0):
        raise ValueError("scan range must stay strictly below criticality")
    h = grid.h
    quotients = []
    for mu in mu_list:
        first = _top_gap_state(assemble_operator(grid, potential, mu))
        second = _top_gap_state(assemble_operator(grid, potential,
                                                  mu + delta_mu))
        if first is None or second is None:
            raise ValueError(f"no bound state at coupling {mu}")
        p2 = align_phase(first[1], second[1], h)
        diff = p2 - first[1]
        quotients.append(np.sqrt(h * np.dot(diff, diff)) / delta_mu)
    return fit_loglog(1.0 - mu_list, np.asarray(quotients))


def resolvent_norm_scan(grid: RadialGrid, potential: PotentialSpec,
                        mu_list, probe_count: int = 2,
                        seed: int = 0) -> ScalingFit:
    """Growth of the reduced-resolvent norm toward criticality.

    For each coupling mu the operator of interest maps a state through the
    well, projects out the critical bound state, and solves against the
    critical operator shifted by the bound energy at mu. Its norm is
    estimated by power iteration on random probes supported in the inner
    quarter of the box, and fitted against 1 - mu.
    """
    if grid.N > 512:
        raise ValueError("resolvent scan wants a dense-solvable grid "
                         f"(N <= 512), got N = {grid.N}")
    mu_list = np.asarray(mu_list, dtype=float)
    h = grid.h
    n = 2 * grid.N
    op1 = assemble_operator(grid, potential, 1.0)
    top = _top_gap_state(op1)
    if top is None:
        raise ValueError("potential is not calibrated: no state at unit "
                         "coupling")
    phi = top[1]
    avals = op1.coupling_diag
    rng = np.random.default_rng(seed)
    norms = []
    for mu in mu_list:
        state = _top_gap_state(assemble_operator(grid, potential, mu))
        if state is None:
            raise ValueError(f"no bound state at coupling {mu}")
        e_mu = state[0]
        shifted = sp.diags(
            [op1.offdiag, op1.diag - e_mu, op1.offdiag], [-1, 0, 1],
            format="csc")
        try:
            lu = spla.splu(shifted)
        except RuntimeError as err:
            raise SolveFailure(
                f"shifted solve at coupling {mu} is singular; refine the "
                "grid") from err
        best = 0.0
        for _ in range(int(probe_count)):
            x = rng.standard_normal(n)
            x[n // 4:] = 0.0
            x /= np.sqrt(h * np.dot(x, x))
            nn = 0.0
            for _ in range(40):
                y = avals * x
                y -= (h * np.dot(phi, y)) * phi
                y = lu.solve(y)
                nn = np.sqrt(h * np.dot(y, y))
                z = lu.solve(y)
                z -= (h * np.dot(phi, z)) * phi
                z = avals * z
                zn = np.sqrt(h * np.dot(z, z))
                if not np.isfinite(zn) or zn == 0:
                    raise SolveFailure(
                        f"power iteration degenerated at coupling {mu}")
                x = z / zn
            best = max(best, nn)
        norms.append(best)
    return fit_loglog(1.0 - mu_list, np.asarray(norms))
