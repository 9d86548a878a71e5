"""Numerical laboratory for adiabatic pair creation.

Radial Dirac operators with a switched potential well: gap bound states
and their coupling curve, continuum (generalized) eigenfunctions near
criticality, unitary slow-time propagation, and the sweep experiments
that measure the decay and pair-creation asymptotics.
"""

from apclab.config import (COMMANDS, RunConfig, read_config,
                           resolve_box_length, write_config)
from apclab.core import (PotentialSpec, RadialGrid, Spinor,
                         SwitchingProfile, eval_potential, eval_switching,
                         inner, make_grid, smooth_window, smoothstep)
from apclab.dynamics import (FreeProjectors, PropagationConfig, Trajectory,
                             free_projectors, propagate_adiabatic,
                             propagate_static, region_mass,
                             subspace_overlap)
from apclab.errors import (ApcLabError, BoxTooSmall, BudgetExceeded,
                           ConfigError, DegenerateEdge, FitDiverged,
                           NoCriticalCoupling, NoDecayBeforeDowncrossing,
                           WindowBeforeThreshold)
from apclab.experiments import (ExperimentConfig, PrefactorTrend,
                                SweepReport, adiabatic_gapless_check,
                                decay_halftime, epsilon_scaling_sweep,
                                gapless_config, halftime_config,
                                mollifier_config, mollifier_decay_check,
                                pair_creation_sweep, pair_sweep_config,
                                s_at_coupling, static_decay_config,
                                static_decay_exponent,
                                static_prefactor_trend)
from apclab.fitting import ScalingFit, fit_loglog
from apclab.gef import (GEFRecord, ResonanceProfile, SpectralBasis,
                        apply_mollifier, build_spectral_basis, compute_gef,
                        continuum_critical_coupling, resonance_scan)
from apclab.pool import parallel_map, worker_count
from apclab.spectral import (BoundState, CurveTable, assemble_operator,
                             bound_state_curve,
                             derivative_of_bound_state_scan,
                             find_critical_coupling, gap_eigenpairs,
                             resolvent_norm_scan)
from apclab.tables import (atomic_write_text, fit_to_dict, write_csv,
                           write_json_report)

__version__ = "0.1.0"
