"""Readers for the result files the simulation CLI writes.

This package consumes those files only through the readers here; the
renderers never parse anything themselves and never import the
simulator.
Every reader validates before returning data and raises SchemaError
naming the file and the offending field, column, or row.

Supported formats (interchange schema version 1):

  curve CSV       header "mu,E,dE_dmu", one row per coupling, floats.
  trajectory CSV  header "t,s,norm,region_mass,crit_overlap" plus a
                  JSON sidecar next to it (same stem, .json suffix)
                  carrying the end-of-run footer: epsilon, p_plus,
                  p_minus, absorbed_norm, region_radius,
                  schema_version.
  resonance CSV   header "mu,k,supnorm,nu_fit,c_fit,kstar"; the fit
                  fields repeat on every row and are empty when the
                  shape fit failed.
  report JSON     object with schema_version, experiment, parameters,
                  rows, fits, environment; each fit block carries at
                  least slope, prefactor, abscissa, ordinate.

For the CSV formats the exact header is the version stamp: a header
mismatch is treated the same way as a schema_version mismatch in JSON.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apcfigures.errors import SchemaError

SUPPORTED_SCHEMA_VERSION = 1

CURVE_HEADER = ("mu", "E", "dE_dmu")
TRAJECTORY_HEADER = ("t", "s", "norm", "region_mass", "crit_overlap")
RESONANCE_HEADER = ("mu", "k", "supnorm", "nu_fit", "c_fit", "kstar")
TRAJECTORY_FOOTER_KEYS = ("epsilon", "p_plus", "p_minus", "absorbed_norm",
                          "region_radius", "schema_version")
FIT_BLOCK_KEYS = ("slope", "prefactor", "abscissa", "ordinate")


@dataclass(frozen=True)
class CurveData:
    """Bound-state energy table: E and dE/dmu against the coupling."""

    mu: np.ndarray
    energy: np.ndarray
    slope: np.ndarray
    path: Path


@dataclass(frozen=True)
class TrajectoryData:
    """One recorded evolution plus its end-of-run footer."""

    t: np.ndarray
    s: np.ndarray
    norm: np.ndarray
    region_mass: np.ndarray
    crit_overlap: np.ndarray
    footer: dict
    path: Path

    @property
    def epsilon(self) -> float:
        return float(self.footer["epsilon"])


@dataclass(frozen=True)
class ResonanceData:
    """Interior sup-norm profile over momentum at one fixed coupling.

    nu_fit, c_fit and kstar are None when the producing scan could not
    fit the resonance shape (they arrive as empty CSV cells).
    """

    mu: float
    k: np.ndarray
    supnorm: np.ndarray
    nu_fit: float | None
    c_fit: float | None
    kstar: float | None
    path: Path


@dataclass(frozen=True)
class FitBlock:
    """One named power-law fit from a report: y ~ prefactor * x**slope."""

    name: str
    slope: float
    prefactor: float
    abscissa: np.ndarray
    ordinate: np.ndarray
    extras: dict


@dataclass(frozen=True)
class ReportData:
    """A sweep report: parameter rows plus the fits derived from them."""

    experiment: str
    parameters: dict
    rows: list
    fits: dict
    path: Path


def _read_rows(path, expected_header) -> list:
    """Shared CSV front end: exact-header check, at least one data row.

    Returns the raw string rows; cell conversion stays with the caller
    because some columns are allowed to be empty.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read input: {exc}") from exc
    if not text.strip():
        raise SchemaError(f"{path}: file is empty")
    reader = csv.reader(text.splitlines())
    header = tuple(next(reader))
    if header != tuple(expected_header):
        raise SchemaError(
            f"{path}: header mismatch: expected "
            f"{','.join(expected_header)!r}, found {','.join(header)!r}")
    rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows after the header")
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(
                f"{path}: line {i} has {len(row)} cells, "
                f"expected {len(header)}")
    return rows


def _cell(path, rows, index, column, allow_empty=False):
    """Column of floats; empty cells become None when allowed."""
    out = []
    for i, row in enumerate(rows, start=2):
        raw = row[index]
        if raw == "":
            if allow_empty:
                out.append(None)
                continue
            raise SchemaError(
                f"{path}: line {i}: column '{column}' is empty")
        try:
            out.append(float(raw))
        except ValueError:
            raise SchemaError(
                f"{path}: line {i}: column '{column}' is not a number: "
                f"{raw!r}") from None
    return out


def read_curve(path) -> CurveData:
    path = Path(path)
    rows = _read_rows(path, CURVE_HEADER)
    return CurveData(
        mu=np.array(_cell(path, rows, 0, "mu")),
        energy=np.array(_cell(path, rows, 1, "E")),
        slope=np.array(_cell(path, rows, 2, "dE_dmu")),
        path=path)


def read_trajectory(path) -> TrajectoryData:
    path = Path(path)
    rows = _read_rows(path, TRAJECTORY_HEADER)
    cols = [np.array(_cell(path, rows, i, name))
            for i, name in enumerate(TRAJECTORY_HEADER)]
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise SchemaError(
            f"{path}: trajectory sidecar {sidecar.name} is missing")
    footer = _load_json(sidecar)
    for key in TRAJECTORY_FOOTER_KEYS:
        if key not in footer:
            raise SchemaError(f"{sidecar}: missing field '{key}'")
    _check_version(sidecar, footer["schema_version"])
    if footer["epsilon"] is None:
        raise SchemaError(f"{sidecar}: field 'epsilon' is null")
    return TrajectoryData(t=cols[0], s=cols[1], norm=cols[2],
                          region_mass=cols[3], crit_overlap=cols[4],
                          footer=footer, path=path)


def read_resonance(path) -> ResonanceData:
    path = Path(path)
    rows = _read_rows(path, RESONANCE_HEADER)
    mu = _cell(path, rows, 0, "mu")
    if max(mu) - min(mu) != 0.0:
        raise SchemaError(
            f"{path}: column 'mu' must be constant in one profile, "
            f"found values in [{min(mu)}, {max(mu)}]")
    # fit constants repeat on every row; take them from the first
    nu_fit = _cell(path, rows, 3, "nu_fit", allow_empty=True)[0]
    c_fit = _cell(path, rows, 4, "c_fit", allow_empty=True)[0]
    kstar = _cell(path, rows, 5, "kstar", allow_empty=True)[0]
    return ResonanceData(
        mu=mu[0],
        k=np.array(_cell(path, rows, 1, "k")),
        supnorm=np.array(_cell(path, rows, 2, "supnorm")),
        nu_fit=nu_fit, c_fit=c_fit, kstar=kstar, path=path)


def _load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read input: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaError(f"{path}: expected a JSON object at top level")
    return payload


def _check_version(path, version) -> None:
    if version != SUPPORTED_SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version {version!r} is not supported "
            f"(this reader expects {SUPPORTED_SCHEMA_VERSION})")


def read_report(path, experiment=None) -> ReportData:
    """Load a sweep report JSON and validate its fit blocks.

    experiment, when given, must match the report's own experiment
    field; renderers use it to reject a report of the wrong kind early.
    """
    path = Path(path)
    payload = _load_json(path)
    if "schema_version" not in payload:
        raise SchemaError(f"{path}: missing field 'schema_version'")
    _check_version(path, payload["schema_version"])
    for key in ("experiment", "parameters", "rows", "fits"):
        if key not in payload:
            raise SchemaError(f"{path}: missing field '{key}'")
    if experiment is not None and payload["experiment"] != experiment:
        raise SchemaError(
            f"{path}: field 'experiment' is {payload['experiment']!r}, "
            f"expected {experiment!r}")
    fits = {}
    for name, block in payload["fits"].items():
        if not isinstance(block, dict):
            raise SchemaError(f"{path}: fit '{name}' is not an object")
        for key in FIT_BLOCK_KEYS:
            if key not in block:
                raise SchemaError(
                    f"{path}: fit '{name}' is missing field '{key}'")
        abscissa = np.asarray(block["abscissa"], dtype=float)
        ordinate = np.asarray(block["ordinate"], dtype=float)
        if abscissa.size == 0 or abscissa.shape != ordinate.shape:
            raise SchemaError(
                f"{path}: fit '{name}' has mismatched or empty "
                f"abscissa/ordinate arrays")
        extras = {k: v for k, v in block.items() if k not in FIT_BLOCK_KEYS}
        fits[name] = FitBlock(name=name, slope=float(block["slope"]),
                              prefactor=float(block["prefactor"]),
                              abscissa=abscissa, ordinate=ordinate,
                              extras=extras)
    return ReportData(experiment=payload["experiment"],
                      parameters=payload["parameters"],
                      rows=list(payload["rows"]), fits=fits, path=path)
