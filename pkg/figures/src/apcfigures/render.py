"""Figure construction: one FigureSpec in, one image file out.

Five figure kinds, all batch-rendered and deterministic:

  curve      bound-state energy against the crossing parameter s, on
             top of the shaded spectral gap [-1, 1] and the two
             continuum bands. s is the distance to the critical
             coupling, s = mu - 1, so the curve meets E = 1 at s = 0.
  decay      region mass against time per slowness value, log-log, one
             trajectory file per line.
  scaling    half-time against epsilon from a sweep report: measured
             points, the fitted power law, and a dashed guide with the
             target exponent (-2/3 unless styled otherwise).
  resonance  interior sup-norm against momentum, one profile per file,
             with the fitted peak position marked.
  pairprob   final up/down splitting probabilities against epsilon
             from a pair sweep report.

Rendering never touches the input files beyond reading them, and a
re-render of the same spec against the same inputs is byte-identical:
the backend is fixed to Agg, fonts ship with matplotlib, and the
writer strips the only volatile metadata fields (Software for PNG,
Date for SVG). Images are written atomically via a temp file.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from apcfigures.errors import SchemaError, SpecError
from apcfigures.schemas import (read_curve, read_report, read_resonance,
                                read_trajectory)

KINDS = ("curve", "decay", "scaling", "resonance", "pairprob")

# kinds that read exactly one input file; the others overlay several
_SINGLE_INPUT = ("curve", "scaling", "pairprob")

_IMAGE_SUFFIXES = (".png", ".svg")

_STYLE_DEFAULTS = {
    "title": None,            # str, axes title
    "dpi": 150,               # int, raster resolution
    "figsize": (6.4, 4.2),    # (width, height) in inches
    "grid": True,             # bool, draw the axes grid
    "target_exponent": None,  # float, dashed power-law guide slope
}

# volatile metadata per format; everything else savefig emits is a pure
# function of the figure contents and the pinned library version
_STRIP_METADATA = {".png": {"Software": None}, ".svg": {"Date": None}}

_RC = {
    "font.family": "DejaVu Sans",
    "svg.hashsalt": "apcfigures",
    "axes.grid": False,
}


@dataclass(frozen=True)
class FigureSpec:
    """One figure to render: kind, input files, output image, style."""

    kind: str
    inputs: tuple
    output: str
    style: dict = field(default_factory=dict)


def _validated(spec: FigureSpec) -> dict:
    """Check a spec field by field; return the merged style dict."""
    if spec.kind not in KINDS:
        raise SpecError(
            f"kind: unknown figure kind {spec.kind!r}, "
            f"expected one of {', '.join(KINDS)}")
    if not spec.inputs:
        raise SpecError("inputs: at least one input file is required")
    if spec.kind in _SINGLE_INPUT and len(spec.inputs) != 1:
        raise SpecError(
            f"inputs: the {spec.kind} kind takes exactly one input "
            f"file, got {len(spec.inputs)}")
    suffix = Path(spec.output).suffix.lower()
    if suffix not in _IMAGE_SUFFIXES:
        raise SpecError(
            f"output: unsupported image suffix {suffix!r}, expected "
            f"one of {', '.join(_IMAGE_SUFFIXES)}")
    style = dict(_STYLE_DEFAULTS)
    for key, value in dict(spec.style).items():
        if key not in _STYLE_DEFAULTS:
            known = ", ".join(sorted(_STYLE_DEFAULTS))
            raise SpecError(f"style: unknown option {key!r} (known: {known})")
        style[key] = value
    if style["title"] is not None and not isinstance(style["title"], str):
        raise SpecError("style: 'title' must be a string")
    if not isinstance(style["dpi"], (int, float)) or not 30 <= style["dpi"] <= 600:
        raise SpecError("style: 'dpi' must be a number in [30, 600]")
    fs = style["figsize"]
    if (not isinstance(fs, (list, tuple)) or len(fs) != 2
            or not all(isinstance(v, (int, float)) and 1 <= v <= 30
                       for v in fs)):
        raise SpecError(
            "style: 'figsize' must be two inch lengths in [1, 30]")
    style["figsize"] = (float(fs[0]), float(fs[1]))
    if style["grid"] not in (True, False):
        raise SpecError("style: 'grid' must be true or false")
    te = style["target_exponent"]
    if te is not None and (not isinstance(te, (int, float))
                           or not math.isfinite(te)):
        raise SpecError("style: 'target_exponent' must be a finite number")
    return style


def _new_axes(style):
    fig = Figure(figsize=style["figsize"], dpi=style["dpi"])
    ax = fig.subplots()
    if style["grid"]:
        ax.grid(True, alpha=0.3, zorder=0)
    if style["title"]:
        ax.set_title(style["title"])
    return fig, ax


def _guide_through(ax, x, y_anchor, x_anchor, exponent, label):
    """Dashed power-law guide through (x_anchor, y_anchor)."""
    xs = np.array([x.min(), x.max()])
    ax.plot(xs, y_anchor * (xs / x_anchor) ** exponent, "--",
            color="0.35", lw=1.2, zorder=3, label=label)


def _build_curve(spec: FigureSpec, style) -> Figure:
    data = read_curve(spec.inputs[0])
    s = data.mu - 1.0
    fig, ax = _new_axes(style)
    ymin, ymax = -1.6, 1.6
    # fixed bands first: the gap between the continua, then the continua
    ax.axhspan(-1.0, 1.0, color="0.93", zorder=1)
    ax.axhspan(1.0, ymax, color="#d7e3f4", zorder=1)
    ax.axhspan(ymin, -1.0, color="#d7e3f4", zorder=1)
    ax.axhline(1.0, color="0.45", lw=0.9, zorder=2)
    ax.axhline(-1.0, color="0.45", lw=0.9, zorder=2)
    ax.plot(s, data.energy, color="C3", lw=1.9, zorder=4,
            label="bound state")
    ax.plot([s[-1]], [data.energy[-1]], "o", color="C3", ms=5, zorder=5)
    ax.annotate("E = 1 reached", xy=(s[-1], data.energy[-1]),
                xytext=(-72, -14), textcoords="offset points", fontsize=9)
    pad = 0.04 * (s.max() - s.min() or 1.0)
    ax.set_xlim(s.min() - pad, s.max() + pad)
    ax.set_ylim(ymin, ymax)
    ax.set_xlabel("s")
    ax.set_ylabel("E(s)")
    ax.legend(loc="lower right")
    return fig


def _build_decay(spec: FigureSpec, style) -> Figure:
    fig, ax = _new_axes(style)
    first = None
    for path in spec.inputs:
        traj = read_trajectory(path)
        keep = (traj.t > 0) & (traj.region_mass > 0)
        if not keep.any():
            raise SchemaError(
                f"{traj.path}: no positive (t, region_mass) samples "
                f"to draw on log axes")
        t, m = traj.t[keep], traj.region_mass[keep]
        ax.loglog(t, m, lw=1.4, marker=".", ms=4,
                  label=f"epsilon = {traj.epsilon:g}")
        if first is None:
            first = (t, m)
    te = style["target_exponent"]
    if te is not None:
        t, m = first
        i = len(t) // 2
        _guide_through(ax, t, m[i], t[i], te, f"guide: slope = {te:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("region mass")
    ax.legend(loc="best")
    return fig


def _build_scaling(spec: FigureSpec, style) -> Figure:
    report = read_report(spec.inputs[0])
    if len(report.fits) != 1:
        raise SchemaError(
            f"{report.path}: expected exactly one fit block, found "
            f"{sorted(report.fits) or 'none'}")
    (fit,) = report.fits.values()
    fig, ax = _new_axes(style)
    x = fit.abscissa
    ax.loglog(x, fit.ordinate, "o", color="C0", ms=5, zorder=4,
              label="measured")
    ax.loglog(x, fit.prefactor * x ** fit.slope, "-", color="C0", lw=1.4,
              zorder=3, label=f"fit: slope = {fit.slope:.3f}")
    te = style["target_exponent"]
    if te is None:
        te = -2.0 / 3.0
    x_mid = math.sqrt(x.min() * x.max())
    y_mid = 1.25 * fit.prefactor * x_mid ** fit.slope
    _guide_through(ax, x, y_mid, x_mid, te, f"guide: slope = {te:.3g}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel(fit.name)
    ax.legend(loc="best")
    return fig


def _build_resonance(spec: FigureSpec, style) -> Figure:
    fig, ax = _new_axes(style)
    for i, path in enumerate(spec.inputs):
        prof = read_resonance(path)
        color = f"C{i % 10}"
        ax.plot(prof.k, prof.supnorm, color=color, lw=1.5,
                label=f"mu = {prof.mu:g}")
        if prof.kstar is not None:
            ax.axvline(prof.kstar, color=color, ls="--", lw=1.0, alpha=0.7)
    ax.set_xlabel("k")
    ax.set_ylabel("interior sup-norm")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="best")
    return fig


def _build_pairprob(spec: FigureSpec, style) -> Figure:
    report = read_report(spec.inputs[0], experiment="pair-creation")
    rows = [r for r in report.rows if "error" not in r]
    if not rows:
        raise SchemaError(f"{report.path}: every sweep row failed")
    for key in ("epsilon", "p_plus", "p_minus"):
        if any(key not in r for r in rows):
            raise SchemaError(
                f"{report.path}: a row is missing field '{key}'")
    rows.sort(key=lambda r: r["epsilon"])
    eps = np.array([r["epsilon"] for r in rows], dtype=float)
    p_plus = np.array([r["p_plus"] for r in rows], dtype=float)
    p_minus = np.array([r["p_minus"] for r in rows], dtype=float)
    fig, ax = _new_axes(style)
    ax.axhline(1.0, color="0.35", ls="--", lw=1.1, zorder=2)
    ax.semilogx(eps, p_plus, "o-", color="C0", label="p_plus")
    ax.semilogx(eps, p_minus, "s-", color="C1", label="p_minus")
    # slower driving to the right, matching how the limit is read
    ax.invert_xaxis()
    ax.set_ylim(-0.05, 1.1)
    ax.set_xlabel("epsilon (decreasing)")
    ax.set_ylabel("probability")
    ax.legend(loc="center right")
    return fig


_BUILDERS = {
    "curve": _build_curve,
    "decay": _build_decay,
    "scaling": _build_scaling,
    "resonance": _build_resonance,
    "pairprob": _build_pairprob,
}


def build_figure(spec: FigureSpec) -> Figure:
    """Validate the spec, read the inputs, return the finished figure.

    Raises SpecError or SchemaError before any drawing when the spec or
    an input file is bad. No file is written; render() does that.
    """
    style = _validated(spec)
    with matplotlib.rc_context(_RC):
        fig = _BUILDERS[spec.kind](spec, style)
        fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> Path:
    """Render one spec to its output image and return the output path.

    The image appears atomically (temp file then rename) and only after
    the figure built cleanly, so a failed render leaves no partial or
    empty image behind.
    """
    fig = build_figure(spec)
    out = Path(spec.output)
    suffix = out.suffix.lower()
    buf = io.BytesIO()
    fig.savefig(buf, format=suffix.lstrip("."),
                metadata=_STRIP_METADATA[suffix])
    payload = buf.getvalue()
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, suffix=suffix + ".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return out


def spec_from_mapping(entry, base_dir=None) -> FigureSpec:
    """Build a FigureSpec from one spec-file entry (a JSON object).

    Unknown keys are rejected by name. Relative input/output paths are
    resolved against base_dir, normally the spec file's own directory,
    so a spec file can travel with its data.
    """
    if not isinstance(entry, dict):
        raise SpecError("figure entry: expected an object")
    allowed = ("kind", "inputs", "output", "style")
    for key in entry:
        if key not in allowed:
            raise SpecError(
                f"figure entry: unknown key {key!r} "
                f"(known: {', '.join(allowed)})")
    for key in ("kind", "inputs", "output"):
        if key not in entry:
            raise SpecError(f"figure entry: missing key {key!r}")
    inputs = entry["inputs"]
    if isinstance(inputs, str):
        inputs = [inputs]
    if not isinstance(inputs, list) or not all(
            isinstance(p, str) for p in inputs):
        raise SpecError("inputs: expected a path or a list of paths")
    base = Path(base_dir) if base_dir is not None else Path(".")

    def _resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    style = entry.get("style", {})
    if not isinstance(style, dict):
        raise SpecError("style: expected an object")
    spec = FigureSpec(kind=entry["kind"],
                      inputs=tuple(str(_resolve(p)) for p in inputs),
                      output=str(_resolve(entry["output"])),
                      style=dict(style))
    _validated(spec)
    return spec
