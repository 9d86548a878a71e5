"""Run configuration: a flat INI-style text format with strict keys.

Sections and keys (all optional, defaults in parentheses):

  [potential] amplitude (2.0), radius (1.0), shape (smooth-bump or
              cosine-well), rescale_factor (1.0)
  [profile]   s_i (-1.0), s_f (1.0), mu_max (1.5)
  [grid]      h (0.05), box_length (auto), n_cells (derived)
  [dynamics]  dt (0.05), epsilon or epsilon_list (command default),
              region_radius (2.0), absorber (off)
  [run]       experiment (calibrate), output_dir (out), seed (0),
              schema_version (1), mu (1.05)

box_length "auto" (or absent) is resolved as the light-cone bound
(s_f - s_i) / min(epsilon) + radius + 20. Unknown sections or keys are
rejected with the offending line and the nearest valid name. Every value
a module precondition constrains is validated here, before any compute.
"""

from __future__ import annotations

import configparser
import difflib
import math
from dataclasses import dataclass, field
from pathlib import Path

from apclab.core import PotentialSpec, SwitchingProfile
from apclab.errors import ConfigError

__all__ = ["RunConfig", "read_config", "write_config", "resolve_box_length",
           "COMMANDS"]

COMMANDS = ("calibrate", "spectrum", "gef-scan", "evolve", "sweep-epsilon",
            "pair-sweep", "check-adiabatic", "resolvent-scan",
            "mollifier-check")

SCHEMA_VERSION = 1

_KNOWN = {
    "potential": ("amplitude", "radius", "shape", "rescale_factor"),
    "profile": ("s_i", "s_f", "mu_max"),
    "grid": ("h", "box_length", "n_cells"),
    "dynamics": ("dt", "epsilon", "epsilon_list", "region_radius",
                 "absorber"),
    "run": ("experiment", "output_dir", "seed", "schema_version", "mu"),
}

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


@dataclass
class RunConfig:
    """Validated, fully typed view of one configuration file."""

    potential: PotentialSpec = field(
        default_factory=lambda: PotentialSpec(amplitude=2.0, radius=1.0))
    profile: SwitchingProfile = field(
        default_factory=lambda: SwitchingProfile(s_i=-1.0, s_f=1.0,
                                                 mu_max=1.5))
    h: float = 0.05
    box_length: float | None = None
    n_cells: int | None = None
    dt: float = 0.05
    epsilon_list: tuple = ()
    region_radius: float = 2.0
    absorber: bool = False
    experiment: str = "calibrate"
    output_dir: str = "out"
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    mu: float = 1.05


def _line_of(text: str, needle: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(needle):
            rest = stripped[len(needle):].lstrip()
            if rest == "" or rest[0] in "=:[]":
                return i
    return None


def _reject_unknown(parser, text: str) -> None:
    for section in parser.sections():
        if section not in _KNOWN:
            hint = difflib.get_close_matches(section, _KNOWN.keys(), n=1)
            extra = f", did you mean [{hint[0]}]?" if hint else ""
            line = _line_of(text, f"[{section}]") or _line_of(text, section)
            raise ConfigError(
                f"line {line}: unknown section [{section}]{extra}")
        for key in parser[section]:
            if key not in _KNOWN[section]:
                pool = [k for keys in _KNOWN.values() for k in keys]
                hint = difflib.get_close_matches(key, pool, n=1)
                extra = f", did you mean '{hint[0]}'?" if hint else ""
                line = _line_of(text, key)
                raise ConfigError(
                    f"line {line}: unknown key '{key}' in "
                    f"[{section}]{extra}")


def _get(parser, section, key, default=None):
    if parser.has_option(section, key):
        return parser.get(section, key).strip()
    return default


def _as_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where} must be a number, got {raw!r}") from None


def _as_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            f"{where} must be an integer, got {raw!r}") from None


def _as_bool(raw: str, where: str) -> bool:
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"{where} must be on or off, got {raw!r}")


def _apply_overrides(parser, overrides) -> None:
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"override {item!r} must look like section.key=value")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in _KNOWN or key not in _KNOWN.get(section, ()):
            pool = [f"{s}.{k}" for s, keys in _KNOWN.items() for k in keys]
            hint = difflib.get_close_matches(target, pool, n=1)
            extra = f", did you mean '{hint[0]}'?" if hint else ""
            raise ConfigError(f"unknown override key {target!r}{extra}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)


def _validated(cfg: RunConfig) -> RunConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {cfg.schema_version} not supported, "
            f"this build reads version {SCHEMA_VERSION}")
    if cfg.experiment not in COMMANDS:
        hint = difflib.get_close_matches(cfg.experiment, COMMANDS, n=1)
        extra = f", did you mean '{hint[0]}'?" if hint else ""
        raise ConfigError(f"unknown experiment {cfg.experiment!r}{extra}")
    if cfg.h <= 0 or not math.isfinite(cfg.h):
        raise ConfigError("grid h must be positive and finite")
    if cfg.box_length is not None and cfg.box_length <= 0:
        raise ConfigError("box_length must be positive (or auto)")
    if cfg.n_cells is not None and cfg.n_cells < 16:
        raise ConfigError(f"n_cells must be at least 16, got {cfg.n_cells}")
    if not 0.0 < cfg.dt <= 0.1:
        raise ConfigError(f"dt must be in (0, 0.1], got {cfg.dt}")
    for e in cfg.epsilon_list:
        if not 0.0 < e <= 1.0:
            raise ConfigError(f"epsilon must be in (0, 1], got {e}")
    if cfg.region_radius < cfg.potential.radius:
        raise ConfigError(
            f"region_radius {cfg.region_radius} must contain the well "
            f"(radius {cfg.potential.radius})")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {cfg.seed}")
    if cfg.mu <= 0:
        raise ConfigError(f"mu must be positive, got {cfg.mu}")
    return cfg


def read_config(path, overrides=()) -> RunConfig:
    """Parse and validate one configuration file, applying overrides.

    Overrides are 'section.key=value' strings; they go through the same
    key check and validation as file content.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    _reject_unknown(parser, text)
    _apply_overrides(parser, overrides)

    try:
        profile = SwitchingProfile(
            s_i=_as_float(_get(parser, "profile", "s_i", "-1.0"),
                          "profile s_i"),
            s_f=_as_float(_get(parser, "profile", "s_f", "1.0"),
                          "profile s_f"),
            mu_max=_as_float(_get(parser, "profile", "mu_max", "1.5"),
                             "profile mu_max"))
    except ValueError as exc:
        raise ConfigError(f"profile: {exc}") from exc
    try:
        potential = PotentialSpec(
            amplitude=_as_float(
                _get(parser, "potential", "amplitude", "2.0"),
                "potential amplitude"),
            radius=_as_float(_get(parser, "potential", "radius", "1.0"),
                             "potential radius"),
            shape=_get(parser, "potential", "shape", "smooth-bump"),
            rescale_factor=_as_float(
                _get(parser, "potential", "rescale_factor", "1.0"),
                "potential rescale_factor"))
    except ValueError as exc:
        raise ConfigError(f"potential: {exc}") from exc

    raw_box = _get(parser, "grid", "box_length")
    box = None
    if raw_box is not None and raw_box.lower() != "auto":
        box = _as_float(raw_box, "grid box_length")
    raw_cells = _get(parser, "grid", "n_cells")
    cells = None if raw_cells is None else _as_int(raw_cells, "grid n_cells")

    single = _get(parser, "dynamics", "epsilon")
    listed = _get(parser, "dynamics", "epsilon_list")
    if single is not None and listed is not None:
        raise ConfigError(
            "give either dynamics epsilon or epsilon_list, not both")
    if listed is not None:
        eps = tuple(_as_float(tok, "dynamics epsilon_list")
                    for tok in listed.replace(",", " ").split())
        if not eps:
            raise ConfigError("dynamics epsilon_list is empty")
    elif single is not None:
        eps = (_as_float(single, "dynamics epsilon"),)
    else:
        eps = ()

    cfg = RunConfig(
        potential=potential,
        profile=profile,
        h=_as_float(_get(parser, "grid", "h", "0.05"), "grid h"),
        box_length=box,
        n_cells=cells,
        dt=_as_float(_get(parser, "dynamics", "dt", "0.05"), "dynamics dt"),
        epsilon_list=eps,
        region_radius=_as_float(
            _get(parser, "dynamics", "region_radius", "2.0"),
            "dynamics region_radius"),
        absorber=_as_bool(_get(parser, "dynamics", "absorber", "off"),
                          "dynamics absorber"),
        experiment=_get(parser, "run", "experiment", "calibrate"),
        output_dir=_get(parser, "run", "output_dir", "out"),
        seed=_as_int(_get(parser, "run", "seed", "0"), "run seed"),
        schema_version=_as_int(
            _get(parser, "run", "schema_version", str(SCHEMA_VERSION)),
            "run schema_version"),
        mu=_as_float(_get(parser, "run", "mu", "1.05"), "run mu"))
    return _validated(cfg)


def resolve_box_length(cfg: RunConfig) -> float:
    """Explicit box length, or the light-cone bound when set to auto."""
    if cfg.box_length is not None:
        return cfg.box_length
    eps_min = min(cfg.epsilon_list) if cfg.epsilon_list else 1.0 / 32.0
    span = cfg.profile.s_f - cfg.profile.s_i
    return span / eps_min + cfg.potential.radius + 20.0


def _f(x: float) -> str:
    return f"{x:.17g}"


def write_config(cfg: RunConfig, path) -> None:
    """Render a config back to INI text; read_config inverts it exactly."""
    lines = ["[potential]",
             f"amplitude = {_f(cfg.potential.amplitude)}",
             f"radius = {_f(cfg.potential.radius)}",
             f"shape = {cfg.potential.shape}",
             f"rescale_factor = {_f(cfg.potential.rescale_factor)}",
             "",
             "[profile]",
             f"s_i = {_f(cfg.profile.s_i)}",
             f"s_f = {_f(cfg.profile.s_f)}",
             f"mu_max = {_f(cfg.profile.mu_max)}",
             "",
             "[grid]",
             f"h = {_f(cfg.h)}"]
    if cfg.box_length is None:
        lines.append("box_length = auto")
    else:
        lines.append(f"box_length = {_f(cfg.box_length)}")
    if cfg.n_cells is not None:
        lines.append(f"n_cells = {cfg.n_cells}")
    lines += ["",
              "[dynamics]",
              f"dt = {_f(cfg.dt)}"]
    if cfg.epsilon_list:
        lines.append("epsilon_list = "
                     + ", ".join(_f(e) for e in cfg.epsilon_list))
    lines += [f"region_radius = {_f(cfg.region_radius)}",
              f"absorber = {'on' if cfg.absorber else 'off'}",
              "",
              "[run]",
              f"experiment = {cfg.experiment}",
              f"output_dir = {cfg.output_dir}",
              f"seed = {cfg.seed}",
              f"schema_version = {cfg.schema_version}",
              f"mu = {_f(cfg.mu)}",
              ""]
    from apclab.tables import atomic_write_text
    atomic_write_text(Path(path), "\n".join(lines))
