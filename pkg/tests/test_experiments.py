"""Experiment drivers against an independently frozen reference run.

The pinned numbers come from a standalone rehearsal script that builds
the staggered operator, the Crank-Nicolson steppers, and the projector
splitting directly on scipy primitives, sharing no code with the
package. Shipped-design observables are frozen at the mini-grid scale so
the whole file stays desk-runnable; the full-size designs are exercised
by the acceptance suite.
"""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apclab.core import SwitchingProfile, eval_switching, make_grid
from apclab.errors import (BoxTooSmall, BudgetExceeded,
                           NoDecayBeforeDowncrossing, WindowBeforeThreshold)
from apclab.experiments import (
    DEFAULT_EPSILONS,
    ExperimentConfig,
    PrefactorTrend,
    SweepReport,
    adiabatic_gapless_check,
    decay_halftime,
    epsilon_scaling_sweep,
    gapless_config,
    halftime_config,
    mollifier_config,
    mollifier_decay_check,
    pair_creation_sweep,
    pair_sweep_config,
    pinned_prefactor,
    s_at_coupling,
    static_decay_config,
    static_decay_exponent,
    static_prefactor_trend,
)
from apclab.fitting import ScalingFit, fit_loglog


class TestExperimentConfig:
    def test_default_grid_resolution(self):
        grid = ExperimentConfig().build_grid()
        assert grid.N == 8000
        assert grid.h == pytest.approx(0.05, rel=1e-12)

    def test_explicit_cell_count_wins(self):
        cfg = ExperimentConfig(box_length=100.0, n_cells=1234)
        assert cfg.build_grid().N == 1234

    def test_environment_fingerprint(self):
        env = ExperimentConfig().environment()
        assert env == {"box_length": 400.0, "n_cells": 8000, "h": 0.05,
                       "dt": 0.05, "seed": 0}

    @pytest.mark.parametrize("bad", [
        dict(dt=0.0), dict(dt=0.2), dict(h=-0.1), dict(box_length=0.0),
        dict(region_radius=0.0), dict(calibration_margin=0.6),
        dict(start_coupling=0.0), dict(start_coupling=1.0),
    ])
    def test_rejects_bad_settings(self, bad):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)

    def test_factories_differ_where_it_matters(self):
        assert static_decay_config(1.05).dt == 0.1
        assert static_decay_config(1.05).region_radius == 4.0
        assert halftime_config().profile.s_f == 22.0
        assert mollifier_config().n_cells == 2048
        assert gapless_config().box_length == 400.0
        assert pair_sweep_config().start_coupling == 0.5


class TestSlowTimeLookup:
    def test_half_coupling_point(self):
        # oracle: brentq on the raised sine pulse directly
        profile = SwitchingProfile(s_i=-1.0, s_f=1.0, mu_max=1.5)
        assert s_at_coupling(profile, 0.5) == pytest.approx(-0.216347,
                                                            abs=1e-5)

    def test_crossing_lands_at_zero(self):
        profile = SwitchingProfile(s_i=-3.0, s_f=5.0, mu_max=2.5)
        assert s_at_coupling(profile, 1.0) == pytest.approx(0.0, abs=1e-9)

    @settings(deadline=None, max_examples=40)
    @given(value=st.floats(0.02, 1.45),
           s_i=st.floats(-30.0, -0.5), width=st.floats(1.0, 50.0))
    def test_round_trips_through_the_pulse(self, value, s_i, width):
        profile = SwitchingProfile(s_i=s_i, s_f=s_i + width, mu_max=1.5)
        s = s_at_coupling(profile, value)
        assert float(eval_switching(profile, s)) == pytest.approx(value,
                                                                  abs=1e-9)
        lo, hi = profile.support
        assert lo < s <= 0.5 * (lo + hi)

    def test_rejects_values_off_the_pulse(self):
        profile = SwitchingProfile(s_i=-1.0, s_f=1.0, mu_max=1.5)
        for bad in (0.0, -0.3, 1.5, 2.0):
            with pytest.raises(ValueError):
                s_at_coupling(profile, bad)


class TestStaticDecayValidation:
    def test_rejects_subcritical_coupling(self):
        with pytest.raises(ValueError, match="overcritical"):
            static_decay_exponent(0.98)

    def test_window_must_start_past_the_dispersive_threshold(self):
        # (mu-1)^(-3/2) = 89.4 at mu = 1.05
        with pytest.raises(WindowBeforeThreshold):
            static_decay_exponent(1.05, t_window=(50.0, 900.0))

    def test_box_must_outlast_the_window(self):
        cfg = ExperimentConfig(box_length=480.0, dt=0.1, region_radius=4.0)
        with pytest.raises(BoxTooSmall):
            static_decay_exponent(1.05, t_window=(450.0, 1000.0), cfg=cfg)

    def test_known_couplings_get_tabled_windows(self):
        from apclab.experiments import _static_box, _static_window
        assert _static_window(1.025) == (1200.0, 2200.0)
        assert _static_box(1.05) == 560.0
        lo, hi = _static_window(1.04)
        thr = 0.04 ** -1.5
        assert lo == pytest.approx(6.0 * thr) and hi == pytest.approx(
            12.0 * thr)


@pytest.fixture(scope="module")
def static_mini_fit():
    cfg = ExperimentConfig(box_length=480.0, dt=0.1, region_radius=4.0)
    return static_decay_exponent(1.05, t_window=(450.0, 900.0), cfg=cfg)


class TestStaticDecayMiniLeg:
    """One frozen mid-size leg; the shipped boxes run in acceptance."""

    def test_exponent_matches_reference(self, static_mini_fit):
        assert static_mini_fit.slope == pytest.approx(-1.5008, abs=4e-3)

    def test_pinned_prefactor_matches_reference(self, static_mini_fit):
        assert pinned_prefactor(static_mini_fit) == pytest.approx(1.7533, rel=4e-3)

    def test_fit_is_tight_and_windowed(self, static_mini_fit):
        assert static_mini_fit.residual_rms < 4e-3
        assert static_mini_fit.window == (450.0, 900.0)
        assert static_mini_fit.slope_ci[0] < static_mini_fit.slope < static_mini_fit.slope_ci[1]
        assert static_mini_fit.n_points == 451


class TestPinnedPrefactor:
    def test_recovers_exact_power_law(self):
        x = np.array([10.0, 20.0, 40.0, 80.0])
        fit = fit_loglog(x, 2.0 * x ** -1.5)
        assert pinned_prefactor(fit) == pytest.approx(2.0, rel=1e-12)

    def test_respects_the_pinned_exponent(self):
        x = np.array([3.0, 6.0, 12.0, 24.0])
        fit = fit_loglog(x, 5.0 * x ** -2.0)
        assert pinned_prefactor(fit, exponent=-2.0) == pytest.approx(
            5.0, rel=1e-12)

    def test_trend_input_validation(self):
        with pytest.raises(ValueError):
            static_prefactor_trend(mu_pair=(0.9, 1.05))
        with pytest.raises(ValueError):
            static_prefactor_trend(mu_pair=(1.025, 1.05, 1.1))


class TestDecayHalftime:
    def test_frozen_ladder_legs(self):
        cfg = halftime_config()
        assert decay_halftime(2.0 ** -3, cfg) == pytest.approx(11.8647,
                                                               rel=1e-3)
        assert decay_halftime(2.0 ** -4, cfg) == pytest.approx(16.8025,
                                                               rel=1e-3)

    def test_fast_switch_never_halves(self):
        # short pulse: coupling is back below critical before the mass halves
        cfg = ExperimentConfig(
            profile=SwitchingProfile(s_i=-1.0, s_f=1.0, mu_max=1.5))
        with pytest.raises(NoDecayBeforeDowncrossing):
            decay_halftime(1.0, cfg)

    def test_rejects_bad_rates(self):
        cfg = halftime_config()
        with pytest.raises(ValueError):
            decay_halftime(0.0, cfg)
        with pytest.raises(ValueError):
            decay_halftime(1.5, cfg)


class TestEpsilonScalingSweep:
    def test_subladder_slope_and_flags(self):
        fit = epsilon_scaling_sweep(eps_list=[2.0 ** -j for j in (3, 4, 5, 6)])
        assert -0.56 < fit.slope < -0.49
        assert fit.n_points == 4
        assert fit.flags == ()

    def test_failed_rates_are_flagged_not_fitted(self):
        # on the short pulse the three fastest rates cannot halve in time
        cfg = ExperimentConfig(
            profile=SwitchingProfile(s_i=-1.0, s_f=1.0, mu_max=1.5),
            box_length=160.0)
        fit = epsilon_scaling_sweep(
            eps_list=[1.0, 0.5, 0.25] + [2.0 ** -j for j in range(3, 7)],
            cfg=cfg)
        assert len(fit.flags) == 3
        assert all("dropped" in f for f in fit.flags)
        assert fit.n_points == 4
        assert fit.slope < 0
        assert 1.0 not in fit.abscissa

    def test_too_few_survivors_is_an_error(self):
        cfg = ExperimentConfig(
            profile=SwitchingProfile(s_i=-1.0, s_f=1.0, mu_max=1.5),
            box_length=160.0)
        with pytest.raises(ValueError, match="need at least 4"):
            epsilon_scaling_sweep(eps_list=[2.0 ** -3, 2.0 ** -4], cfg=cfg)

    def test_default_ladder_is_the_frozen_one(self):
        assert DEFAULT_EPSILONS == tuple(2.0 ** -j for j in range(3, 10))


@pytest.fixture(scope="module")
def gapless_report():
    return adiabatic_gapless_check()


class TestGaplessCheck:

    def test_frozen_overlaps(self, gapless_report):
        got = [row["crit_overlap"] for row in gapless_report.rows]
        for value, expected in zip(got, (0.93724, 0.95378, 0.96494, 0.97250)):
            assert value == pytest.approx(expected, abs=5e-4)

    def test_overlap_improves_as_the_switch_slows(self, gapless_report):
        got = [row["crit_overlap"] for row in gapless_report.rows]
        assert all(b > a for a, b in zip(got, got[1:]))

    def test_report_provenance(self, gapless_report):
        assert gapless_report.experiment == "adiabatic-gapless"
        assert gapless_report.schema_version == 1
        assert gapless_report.environment["n_cells"] == 8000
        assert gapless_report.parameters["s0"] == pytest.approx(-0.216347, abs=1e-5)
        assert gapless_report.parameters["mu_at_s0"] == pytest.approx(0.5, abs=1e-10)

    def test_start_point_must_precede_the_crossing(self):
        with pytest.raises(ValueError):
            adiabatic_gapless_check(s0=0.2)
        with pytest.raises(ValueError):
            adiabatic_gapless_check(s0=-5.0)


@pytest.fixture(scope="module")
def pair_single_leg():
    return pair_creation_sweep(eps_list=(1 / 32,))


class TestPairCreationSweep:

    def test_frozen_splitting(self, pair_single_leg):
        row = pair_single_leg.rows[0]
        assert row["p_plus"] == pytest.approx(0.93970, abs=1e-3)
        assert row["p_minus"] == pytest.approx(0.06030, abs=1e-3)

    def test_projectors_split_exactly(self, pair_single_leg):
        assert pair_single_leg.rows[0]["projector_sum"] == pytest.approx(
            1.0, abs=1e-5)

    def test_nothing_returns_after_the_exit(self, pair_single_leg):
        assert 1.0 <= pair_single_leg.rows[0]["no_return_ratio"] < 1.001

    def test_crossing_overlap_matches_reference(self, pair_single_leg):
        assert pair_single_leg.rows[0]["crit_overlap_at_crossing"] == pytest.approx(
            0.92141, abs=1.5e-3)

    def test_leg_sizes_its_own_box(self, pair_single_leg):
        row = pair_single_leg.rows[0]
        assert row["box_length"] == pytest.approx(77.4616, rel=1e-3)
        assert row["n_cells"] == 1550
        assert row["t_total"] == pytest.approx(51.4616, rel=1e-3)

    def test_failed_leg_becomes_an_error_row(self):
        report = pair_creation_sweep(eps_list=(2.0,))
        assert len(report.rows) == 1
        assert "error" in report.rows[0]
        assert report.rows[0]["epsilon"] == 2.0

    def test_report_parameters(self, pair_single_leg):
        assert pair_single_leg.experiment == "pair-creation"
        assert pair_single_leg.parameters["s_off"] == pytest.approx(1.391827,
                                                               abs=1e-5)
        assert pair_single_leg.parameters["sigma"] == pytest.approx(0.1241,
                                                               abs=1e-3)
        assert pair_single_leg.environment["box_length"] == "per-run"


@pytest.fixture(scope="module")
def mollifier_mini_fit():
    cfg = ExperimentConfig(box_length=150.0, n_cells=1024,
                           region_radius=16.0, calibration_margin=2.5e-4)
    return mollifier_decay_check(
        1.05, kappa_list=np.geomspace(0.04, 0.16, 5), cfg=cfg)


class TestMollifierCheck:

    def test_mass_vanishes_at_a_steep_order(self, mollifier_mini_fit):
        assert mollifier_mini_fit.slope == pytest.approx(2.1891, abs=5e-3)

    def test_mass_span_matches_reference(self, mollifier_mini_fit):
        # renormalization-invariant companion pin to the fitted order
        assert (mollifier_mini_fit.ordinate[-1] / mollifier_mini_fit.ordinate[0]
                == pytest.approx(20.359, rel=5e-3))

    def test_masses_rise_with_the_cutoff(self, mollifier_mini_fit):
        assert np.all(np.diff(mollifier_mini_fit.ordinate) > 0)

    def test_no_default_cutoff_touches_the_resonance(self, mollifier_mini_fit):
        assert mollifier_mini_fit.flags == ()
        assert mollifier_mini_fit.n_points == 5

    def test_resonant_cutoffs_are_flagged_and_excluded(self):
        cfg = ExperimentConfig(box_length=80.0, n_cells=512,
                               region_radius=16.0, calibration_margin=2.5e-4)
        fit = mollifier_decay_check(
            1.05, kappa_list=np.geomspace(0.04, 0.4, 6), cfg=cfg)
        assert len(fit.flags) == 1
        assert "resonance" in fit.flags[0]
        assert fit.abscissa.max() < 0.3

    def test_rejects_couplings_off_the_scan_range(self):
        for bad in (0.9, 1.0, 1.2):
            with pytest.raises(ValueError):
                mollifier_decay_check(bad)

    def test_dense_budget_is_enforced(self):
        cfg = ExperimentConfig(box_length=50.0, n_cells=2304,
                               region_radius=16.0, calibration_margin=2.5e-4)
        with pytest.raises(BudgetExceeded):
            mollifier_decay_check(1.05, cfg=cfg)


class TestSweepReportShape:
    def test_fields_and_defaults(self):
        report = SweepReport(experiment="x", parameters={}, rows=[],
                             fits={}, environment={})
        assert report.schema_version == 1
        assert dataclasses.asdict(report)["experiment"] == "x"
