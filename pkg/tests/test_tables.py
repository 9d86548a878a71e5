"""File format tests: CSV schemas, atomic writes, JSON reports."""

import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apclab.dynamics import Trajectory
from apclab.experiments import SweepReport
from apclab.fitting import ScalingFit
from apclab.gef import ResonanceProfile
from apclab.spectral import CurveTable
from apclab.tables import atomic_write_text, fit_to_dict, fmt, write_csv, \
    write_json_report


def make_fit(flags=()):
    x = np.array([1.0, 2.0, 4.0, 8.0])
    y = 2.0 * x ** -1.5
    return ScalingFit(abscissa=x, ordinate=y, slope=-1.5,
                      intercept=np.log10(2.0), slope_ci=(-1.6, -1.4),
                      residual_rms=0.001, window=(1.0, 8.0),
                      flags=list(flags))


class TestCellFormat:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_cells_parse_back_identical(self, x):
        assert float(fmt(x)) == x

    def test_none_is_empty(self):
        assert fmt(None) == ""

    def test_ints_stay_plain(self):
        assert fmt(7) == "7"
        assert fmt(np.int64(-3)) == "-3"

    def test_numpy_floats_full_precision(self):
        x = np.float64(0.1) / 3.0
        assert float(fmt(x)) == float(x)


class TestAtomicWrite:
    def test_writes_content_and_leaves_no_temp(self, tmp_path):
        target = tmp_path / "out.csv"
        atomic_write_text(target, "a,b\r\n1,2\r\n")
        assert target.read_bytes() == b"a,b\r\n1,2\r\n"
        leftovers = [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
        assert leftovers == []

    def test_overwrites_existing_file(self, tmp_path):
        target = tmp_path / "out.txt"
        target.write_text("old")
        atomic_write_text(target, "new")
        assert target.read_text() == "new"

    def test_failed_replace_cleans_up_temp(self, tmp_path):
        # target is a directory: the final rename fails, temp must go away
        target = tmp_path / "adir"
        target.mkdir()
        with pytest.raises(OSError):
            atomic_write_text(target, "text")
        leftovers = [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
        assert leftovers == []


class TestCurveCsv:
    def test_three_rows_make_four_lines(self, tmp_path):
        table = CurveTable(mus=np.array([0.4, 0.7, 1.0]),
                           energies=np.array([-0.9, 0.1, 0.999]),
                           slopes=np.array([1.1, 2.2, 3.3]), mu_B=0.404)
        path = tmp_path / "curve.csv"
        write_csv(table, path)
        text = path.read_bytes().decode("utf-8")
        lines = text.splitlines()
        assert len(lines) == 4
        assert lines[0] == "mu,E,dE_dmu"
        assert text.count("\r\n") == 4  # RFC-4180 row endings

    def test_values_round_trip_through_the_file(self, tmp_path):
        mus = np.array([1.0 / 3.0, 2.0 / 3.0])
        energies = np.array([-0.123456789012345678, 0.5])
        table = CurveTable(mus=mus, energies=energies,
                           slopes=np.array([1.0, 2.0]), mu_B=0.4)
        path = tmp_path / "curve.csv"
        write_csv(table, path)
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["mu", "E", "dE_dmu"]
        for row, mu, e in zip(rows[1:], mus, energies):
            assert float(row[0]) == mu
            assert float(row[1]) == e


class TestScalingFitCsv:
    def test_schema_and_fitted_column(self, tmp_path):
        fit = make_fit()
        path = tmp_path / "fit.csv"
        write_csv(fit, path)
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["x", "y", "fit"]
        assert len(rows) == 1 + fit.n_points
        for row, x, y in zip(rows[1:], fit.abscissa, fit.ordinate):
            assert float(row[0]) == x
            fitted = fit.prefactor * x ** fit.slope
            assert float(row[2]) == pytest.approx(fitted, rel=1e-14)
            assert float(row[1]) == pytest.approx(y, rel=1e-14)


class TestTrajectoryCsv:
    def make_trajectory(self):
        return Trajectory(
            times=np.array([0.0, 1.0, 2.0]),
            s_values=np.array([-0.2, -0.1, 0.0]),
            norms=np.array([1.0, 1.0, 1.0]),
            region_masses=np.array([0.9, 0.8, 0.7]),
            crit_overlaps=np.array([0.99, 0.98, 0.97]),
            final_state=None, epsilon=0.1, region_radius=2.0,
            p_plus=0.6, p_minus=0.4)

    def test_rows_and_sidecar(self, tmp_path):
        path = tmp_path / "traj.csv"
        write_csv(self.make_trajectory(), path)
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["t", "s", "norm", "region_mass", "crit_overlap"]
        assert len(rows) == 4
        footer = json.loads((tmp_path / "traj.json").read_text())
        assert footer["p_plus"] == 0.6
        assert footer["p_minus"] == 0.4
        assert footer["absorbed_norm"] == 0.0
        assert footer["epsilon"] == 0.1
        assert footer["schema_version"] == 1

    def test_missing_projections_serialize_as_null(self, tmp_path):
        traj = self.make_trajectory()
        traj.p_plus = None
        traj.p_minus = None
        write_csv(traj, tmp_path / "traj.csv")
        footer = json.loads((tmp_path / "traj.json").read_text())
        assert footer["p_plus"] is None


class TestResonanceCsv:
    def test_constants_repeat_per_row(self, tmp_path):
        profile = ResonanceProfile(
            mu=1.05, momenta=np.array([0.1, 0.2, 0.3]),
            supnorms=np.array([3.0, 9.0, 4.0]), amplitude_fit=None,
            nu_fit=0.72, c_fit=1.3, kstar=0.2, residual_rel=0.05)
        path = tmp_path / "res.csv"
        write_csv(profile, path)
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["mu", "k", "supnorm", "nu_fit", "c_fit", "kstar"]
        assert len(rows) == 4
        assert all(float(r[0]) == 1.05 for r in rows[1:])
        assert all(float(r[5]) == 0.2 for r in rows[1:])

    def test_failed_fit_leaves_empty_cells(self, tmp_path):
        profile = ResonanceProfile(
            mu=1.05, momenta=np.array([0.1]), supnorms=np.array([3.0]),
            amplitude_fit=None, nu_fit=None, c_fit=None, kstar=None,
            residual_rel=None)
        path = tmp_path / "res.csv"
        write_csv(profile, path)
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert rows[1][3] == ""
        assert rows[1][5] == ""


def test_unknown_type_is_rejected(tmp_path):
    with pytest.raises(TypeError, match="no CSV schema"):
        write_csv(object(), tmp_path / "x.csv")


class TestJsonReport:
    def test_report_round_trips_with_fit_block(self, tmp_path):
        fit = make_fit(flags=["window-narrow"])
        report = SweepReport(
            experiment="sweep-epsilon",
            parameters={"epsilon_list": [0.5, 0.25],
                        "seed": np.int64(3)},
            rows=[{"epsilon": np.float64(0.5), "t_half": 11.0}],
            fits={"halftime_vs_epsilon": fit},
            environment={"h": 0.05, "n_cells": 400})
        path = tmp_path / "report.json"
        write_json_report(report, path)
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["experiment"] == "sweep-epsilon"
        assert payload["schema_version"] == 1
        assert payload["parameters"]["seed"] == 3
        assert payload["rows"][0]["epsilon"] == 0.5
        block = payload["fits"]["halftime_vs_epsilon"]
        assert block["slope"] == -1.5
        assert block["prefactor"] == pytest.approx(2.0, rel=1e-12)
        assert block["n_points"] == 4
        assert block["flags"] == ["window-narrow"]

    def test_fit_to_dict_is_json_ready(self):
        blob = json.dumps(fit_to_dict(make_fit()))
        assert "slope_ci" in blob
