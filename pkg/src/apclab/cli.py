"""Command-line surface: one experiment per invocation, files out.

Every run reads one config file (plus optional section.key=value
overrides), writes a resolved copy of the config into the output
directory first, then writes its result files there. Exit codes: 0 on
success, 2 for configuration or usage problems (message carries the
offending line or key), 1 for a failure during compute (message names
the failing run).

Outputs per command:
  calibrate       mu_c.json
  spectrum        curve.csv
  gef-scan        resonance.csv
  evolve          trajectory.csv (+ trajectory.json footer)
  sweep-epsilon   halftime_fit.csv, sweep_epsilon.json
  pair-sweep      pair_sweep.csv, pair_sweep.json
  check-adiabatic gapless.csv, gapless.json
  resolvent-scan  bound_state_growth.csv, resolvent_growth.csv,
                  resolvent_scan.json
  mollifier-check mollifier_fit.csv, mollifier_check.json

Calibration inside commands uses the package-standard edge margin 1e-4
(tolerance 1e-8) on the exact run grid. The resolvent scan always runs
on its own dense-solvable grid (box 40, 512 cells, margin 1e-2), since
the norm estimate needs full solves; the config grid would blow the
budget there.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from apclab.config import (COMMANDS, RunConfig, read_config,
                           resolve_box_length, write_config)
from apclab.core import make_grid
from apclab.dynamics import PropagationConfig, free_projectors, \
    propagate_adiabatic
from apclab.errors import ConfigError
from apclab.experiments import (DEFAULT_EPSILONS, GAPLESS_EPSILONS,
                                PAIR_EPSILONS, ExperimentConfig, SweepReport,
                                _calibrated, _critical_state,
                                adiabatic_gapless_check, epsilon_scaling_sweep,
                                mollifier_config, mollifier_decay_check,
                                pair_creation_sweep, s_at_coupling)
from apclab.gef import continuum_critical_coupling, resonance_scan
from apclab.pool import parallel_map
from apclab.spectral import (CurveTable, assemble_operator,
                             bound_state_curve,
                             derivative_of_bound_state_scan,
                             find_critical_coupling, gap_eigenpairs,
                             resolvent_norm_scan)
from apclab.tables import atomic_write_text, write_csv, write_json_report

CALIBRATION_MARGIN = 1e-4
CALIBRATION_TOL = 1e-8


def _experiment_config(cfg: RunConfig) -> ExperimentConfig:
    return ExperimentConfig(
        potential=replace(cfg.potential), profile=cfg.profile, h=cfg.h,
        box_length=resolve_box_length(cfg), n_cells=cfg.n_cells, dt=cfg.dt,
        region_radius=cfg.region_radius,
        calibration_margin=CALIBRATION_MARGIN,
        calibration_tol=CALIBRATION_TOL, seed=cfg.seed)


def _write_rows_csv(path, header, rows) -> None:
    from apclab.tables import _csv_text
    atomic_write_text(path, _csv_text(header, rows))


def _cmd_calibrate(cfg: RunConfig, outdir: Path) -> None:
    grid = _experiment_config(cfg).build_grid()
    pot = replace(cfg.potential)
    relative = find_critical_coupling(grid, pot, tol=CALIBRATION_TOL,
                                      edge_margin=CALIBRATION_MARGIN)
    payload = {"mu_critical": relative,
               "rescale_factor": pot.rescale_factor,
               "edge_margin": CALIBRATION_MARGIN,
               "tolerance": CALIBRATION_TOL,
               "box_length": grid.L, "n_cells": grid.N, "h": grid.h,
               "schema_version": cfg.schema_version}
    atomic_write_text(outdir / "mu_c.json",
                      json.dumps(payload, indent=2) + "\n")


def _cmd_spectrum(cfg: RunConfig, outdir: Path) -> None:
    ec = _experiment_config(cfg)
    grid = ec.build_grid()
    pot = _calibrated(grid, ec)
    curve = bound_state_curve(grid, pot, 0.35, 1.0, 61)
    # the scan's edge exclusion protects the detachment end but also
    # drops the calibrated state parked at the top margin; put the
    # endpoint back so the table runs all the way to the edge
    top = gap_eigenpairs(assemble_operator(grid, pot, 1.0),
                         tol_edge=0.45 * CALIBRATION_MARGIN)
    if top and (len(curve.mus) == 0 or curve.mus[-1] < 1.0):
        mus = np.append(curve.mus, 1.0)
        energies = np.append(curve.energies, top[-1].energy)
        slopes = np.gradient(energies, mus)
        curve = CurveTable(mus=mus, energies=energies, slopes=slopes,
                           mu_B=curve.mu_B)
    write_csv(curve, outdir / "curve.csv")


def _cmd_gef_scan(cfg: RunConfig, outdir: Path) -> None:
    grid = _experiment_config(cfg).build_grid()
    pot = replace(cfg.potential)
    scale = continuum_critical_coupling(pot)
    pot = replace(pot, rescale_factor=pot.rescale_factor * scale)
    scan = resonance_scan(grid, pot, cfg.mu, mapper=parallel_map)
    write_csv(scan, outdir / "resonance.csv")


def _cmd_evolve(cfg: RunConfig, outdir: Path) -> None:
    ec = _experiment_config(cfg)
    grid = ec.build_grid()
    pot = _calibrated(grid, ec)
    epsilon = cfg.epsilon_list[0] if cfg.epsilon_list else 1.0 / 32.0
    s0 = s_at_coupling(cfg.profile, ec.start_coupling)
    s_end = cfg.profile.support[1]
    psi0 = gap_eigenpairs(
        assemble_operator(grid, pot, ec.start_coupling))[-1].state
    phi_c = _critical_state(grid, pot, ec)
    pcfg = PropagationConfig(dt=cfg.dt, region_radius=cfg.region_radius,
                             epsilon=epsilon, record_stride=20,
                             absorbing_mask=cfg.absorber)
    traj = propagate_adiabatic(psi0, grid, pot, cfg.profile, epsilon,
                               s0, s_end, pcfg, overlap_state=phi_c)
    projectors = free_projectors(grid)
    traj.p_plus = projectors.plus(traj.final_state).norm() ** 2
    traj.p_minus = projectors.minus(traj.final_state).norm() ** 2
    write_csv(traj, outdir / "trajectory.csv")


def _cmd_sweep_epsilon(cfg: RunConfig, outdir: Path) -> None:
    eps = cfg.epsilon_list or DEFAULT_EPSILONS
    ec = _experiment_config(cfg)
    fit = epsilon_scaling_sweep(eps, ec, mapper=parallel_map)
    write_csv(fit, outdir / "halftime_fit.csv")
    rows = [{"epsilon": float(e), "t_half": float(t)}
            for e, t in zip(fit.abscissa, fit.ordinate)]
    report = SweepReport(
        experiment="sweep-epsilon",
        parameters={"epsilon_list": [float(e) for e in eps]},
        rows=rows, fits={"halftime_vs_epsilon": fit},
        environment=ec.environment())
    write_json_report(report, outdir / "sweep_epsilon.json")


def _cmd_pair_sweep(cfg: RunConfig, outdir: Path) -> None:
    eps = cfg.epsilon_list or PAIR_EPSILONS
    report = pair_creation_sweep(eps, _experiment_config(cfg),
                                 mapper=parallel_map)
    write_json_report(report, outdir / "pair_sweep.json")
    header = ("epsilon", "p_plus", "p_minus", "projector_sum",
              "crit_overlap_at_crossing", "no_return_ratio")
    rows = [tuple(row[k] for k in header)
            for row in report.rows if "error" not in row]
    _write_rows_csv(outdir / "pair_sweep.csv", header, rows)


def _cmd_check_adiabatic(cfg: RunConfig, outdir: Path) -> None:
    eps = cfg.epsilon_list or GAPLESS_EPSILONS
    report = adiabatic_gapless_check(eps, cfg=_experiment_config(cfg),
                                     mapper=parallel_map)
    write_json_report(report, outdir / "gapless.json")
    rows = [(row["epsilon"], row["crit_overlap"]) for row in report.rows]
    _write_rows_csv(outdir / "gapless.csv", ("epsilon", "crit_overlap"),
                    rows)


def _cmd_resolvent_scan(cfg: RunConfig, outdir: Path) -> None:
    grid = make_grid(40.0, 512)
    pot = replace(cfg.potential)
    find_critical_coupling(grid, pot, tol=1e-6, edge_margin=1e-2)
    mus = 1.0 - np.geomspace(0.3, 0.02, 7)
    derivative_fit = derivative_of_bound_state_scan(grid, pot, mus, 1e-3)
    resolvent_fit = resolvent_norm_scan(grid, pot, mus, probe_count=2,
                                        seed=cfg.seed)
    write_csv(derivative_fit, outdir / "bound_state_growth.csv")
    write_csv(resolvent_fit, outdir / "resolvent_growth.csv")
    report = SweepReport(
        experiment="resolvent-scan",
        parameters={"box_length": 40.0, "n_cells": 512, "edge_margin": 1e-2,
                    "delta_mu": 1e-3, "probe_count": 2, "seed": cfg.seed},
        rows=[{"one_minus_mu": float(1.0 - m)} for m in mus],
        fits={"bound_state_growth": derivative_fit,
              "resolvent_growth": resolvent_fit},
        environment={"box_length": 40.0, "n_cells": 512, "h": 40.0 / 512,
                     "dt": None, "seed": cfg.seed})
    write_json_report(report, outdir / "resolvent_scan.json")


def _cmd_mollifier_check(cfg: RunConfig, outdir: Path) -> None:
    base = mollifier_config()
    box = resolve_box_length(cfg)
    ec = replace(base, potential=replace(cfg.potential),
                 profile=cfg.profile, h=cfg.h, box_length=box,
                 n_cells=cfg.n_cells, dt=cfg.dt, seed=cfg.seed)
    fit = mollifier_decay_check(cfg.mu, cfg=ec)
    write_csv(fit, outdir / "mollifier_fit.csv")
    report = SweepReport(
        experiment="mollifier-check",
        parameters={"mu": cfg.mu,
                    "calibration_margin": ec.calibration_margin,
                    "window_radius": ec.region_radius},
        rows=[{"kappa": float(k), "mass": float(m)}
              for k, m in zip(fit.abscissa, fit.ordinate)],
        fits={"mass_vs_cutoff": fit},
        environment=ec.environment())
    write_json_report(report, outdir / "mollifier_check.json")


_HANDLERS = {
    "calibrate": _cmd_calibrate,
    "spectrum": _cmd_spectrum,
    "gef-scan": _cmd_gef_scan,
    "evolve": _cmd_evolve,
    "sweep-epsilon": _cmd_sweep_epsilon,
    "pair-sweep": _cmd_pair_sweep,
    "check-adiabatic": _cmd_check_adiabatic,
    "resolvent-scan": _cmd_resolvent_scan,
    "mollifier-check": _cmd_mollifier_check,
}


def _precheck(command: str, cfg: RunConfig) -> None:
    """Command-specific preconditions, checked before any compute."""
    if command in ("gef-scan", "mollifier-check"):
        if not 1.0 < cfg.mu <= 1.1:
            raise ConfigError(
                f"{command} needs run mu in (1, 1.1], got {cfg.mu}")
    if command == "mollifier-check":
        cells = cfg.n_cells
        if cells is None:
            cells = int(round(resolve_box_length(cfg) / cfg.h))
        if cells > 2048:
            raise ConfigError(
                f"mollifier-check diagonalizes densely and needs "
                f"n_cells <= 2048, the grid resolves to {cells}")
    if command == "evolve" and len(cfg.epsilon_list) > 1:
        raise ConfigError(
            "evolve runs a single rate; give one epsilon, not a list")


def _resolved(command: str, cfg: RunConfig) -> RunConfig:
    eps = cfg.epsilon_list
    if not eps:
        eps = {"sweep-epsilon": DEFAULT_EPSILONS,
               "pair-sweep": PAIR_EPSILONS,
               "check-adiabatic": GAPLESS_EPSILONS,
               "evolve": (1.0 / 32.0,)}.get(command, ())
    return dataclasses.replace(
        cfg, experiment=command, epsilon_list=tuple(eps),
        box_length=resolve_box_length(cfg))


def run_cli(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="apclab",
        description="Radial gap-crossing laboratory: one experiment per "
                    "invocation, file outputs with embedded provenance.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("config", help="path to the run config file")
        cmd.add_argument("overrides", nargs="*", metavar="section.key=value",
                         help="config overrides applied before validation")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; fold its exit into our contract
        return 0 if exc.code in (0, None) else 2
    if args.command is None:
        parser.print_usage(file=sys.stderr)
        print("error: a command is required", file=sys.stderr)
        return 2

    try:
        cfg = read_config(args.config, overrides=args.overrides)
        _precheck(args.command, cfg)
        resolved = _resolved(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    outdir = Path(resolved.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        write_config(resolved, outdir / "config.resolved.ini")
        _HANDLERS[args.command](resolved, outdir)
    except Exception as exc:
        print(f"run failed [{args.command}]: "
              f"{exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"[{args.command}] outputs written to {outdir}")
    return 0


def main() -> None:  # console-script entry point
    raise SystemExit(run_cli())
