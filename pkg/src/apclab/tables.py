"""File formats for every result object the package produces.

CSV tables are RFC-4180-style: UTF-8, CRLF row endings, '.' decimal,
floats printed with 17 significant digits so parsing them back gives the
identical double. All writes go through a temp file in the target
directory followed by an atomic rename, so readers never see a partial
file.

Schemas (column order is part of the contract):
  CurveTable        -> "mu,E,dE_dmu"
  ScalingFit        -> "x,y,fit" (fit = prefactor * x**slope)
  Trajectory        -> "t,s,norm,region_mass,crit_overlap" plus a JSON
                       sidecar (same path, .json suffix) carrying the
                       final p_plus / p_minus / absorbed_norm footer
  ResonanceProfile  -> "mu,k,supnorm,nu_fit,c_fit,kstar" (fit fields
                       repeated per row; empty when the fit failed)
  SweepReport       -> JSON via write_json_report
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from apclab.dynamics import Trajectory
from apclab.experiments import SCHEMA_VERSION, SweepReport
from apclab.fitting import ScalingFit
from apclab.gef import ResonanceProfile
from apclab.spectral import CurveTable

__all__ = ["write_csv", "write_json_report", "fit_to_dict",
           "atomic_write_text"]


def fmt(x) -> str:
    """One CSV cell: full-precision float, plain int, or empty for None."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str) -> None:
    """Write text so the file appears complete or not at all."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name,
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)  # excel dialect: CRLF, minimal quoting
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(cell) for cell in row])
    return buf.getvalue()


def write_csv(table, path) -> None:
    """Serialize a known result object to CSV at path (atomically).

    Trajectories additionally get a JSON sidecar next to the CSV with
    the end-of-run bookkeeping that has no natural row.
    """
    path = Path(path)
    if isinstance(table, CurveTable):
        rows = zip(table.mus, table.energies, table.slopes)
        atomic_write_text(path, _csv_text(("mu", "E", "dE_dmu"), rows))
    elif isinstance(table, ScalingFit):
        fitted = table.prefactor * np.asarray(table.abscissa) ** table.slope
        rows = zip(table.abscissa, table.ordinate, fitted)
        atomic_write_text(path, _csv_text(("x", "y", "fit"), rows))
    elif isinstance(table, Trajectory):
        rows = zip(table.times, table.s_values, table.norms,
                   table.region_masses, table.crit_overlaps)
        atomic_write_text(path, _csv_text(
            ("t", "s", "norm", "region_mass", "crit_overlap"), rows))
        footer = {"p_plus": table.p_plus, "p_minus": table.p_minus,
                  "absorbed_norm": table.absorbed_norm,
                  "epsilon": table.epsilon,
                  "region_radius": table.region_radius,
                  "schema_version": SCHEMA_VERSION}
        atomic_write_text(path.with_suffix(".json"),
                          json.dumps(_jsonable(footer), indent=2) + "\n")
    elif isinstance(table, ResonanceProfile):
        rows = ((table.mu, k, s, table.nu_fit, table.c_fit, table.kstar)
                for k, s in zip(table.momenta, table.supnorms))
        atomic_write_text(path, _csv_text(
            ("mu", "k", "supnorm", "nu_fit", "c_fit", "kstar"), rows))
    else:
        raise TypeError(f"no CSV schema for {type(table).__name__}")


def fit_to_dict(fit: ScalingFit) -> dict:
    """JSON-ready view of a fit, windows and flags included."""
    return {"slope": fit.slope, "intercept": fit.intercept,
            "prefactor": fit.prefactor,
            "slope_ci": list(fit.slope_ci),
            "residual_rms": fit.residual_rms,
            "window": list(fit.window),
            "n_points": fit.n_points,
            "abscissa": list(map(float, fit.abscissa)),
            "ordinate": list(map(float, fit.ordinate)),
            "flags": list(fit.flags)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, ScalingFit):
        return fit_to_dict(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json_report(report: SweepReport, path) -> None:
    """Serialize a sweep report (fits converted in place) atomically."""
    payload = dataclasses.asdict(report)
    payload["schema_version"] = SCHEMA_VERSION
    payload["fits"] = {name: fit_to_dict(f) if isinstance(f, ScalingFit)
                       else _jsonable(f)
                       for name, f in report.fits.items()}
    atomic_write_text(Path(path),
                      json.dumps(_jsonable(payload), indent=2) + "\n")
