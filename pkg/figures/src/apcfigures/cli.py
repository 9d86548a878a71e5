"""Batch figure tool: render one figure from flags or many from a file.

Two invocation shapes:

  apc-figures --kind curve --input out/curve.csv --output curve.png \
              [--style title="Level crossing"] [--style dpi=200]
  apc-figures --spec figures.json

The spec file is a JSON object:

  {"schema_version": 1,
   "figures": [
     {"kind": "curve", "inputs": ["out/curve.csv"],
      "output": "img/curve.png", "style": {"title": "Level crossing"}},
     ...]}

Relative paths inside a spec file resolve against the spec file's own
directory. Exit codes follow the producer's convention: 0 with one
line per image written, 2 when the spec or an input file fails
validation (the message names the field), 1 when rendering itself
fails (the message names the figure). Figures render sequentially in
this one process.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from apcfigures.errors import SchemaError, SpecError
from apcfigures.render import KINDS, FigureSpec, render, spec_from_mapping


def _style_pairs(pairs) -> dict:
    """Parse repeated --style key=value flags; values read as JSON when
    they parse, plain strings otherwise (so title=Gap needs no quotes).
    """
    style = {}
    for raw in pairs or ():
        key, sep, value = raw.partition("=")
        if not sep or not key:
            raise SpecError(
                f"style: expected key=value, got {raw!r}")
        try:
            style[key] = json.loads(value)
        except json.JSONDecodeError:
            style[key] = value
    return style


def _specs_from_file(path) -> list:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SpecError(f"{path}: cannot read spec file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: spec file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SpecError(f"{path}: expected a JSON object at top level")
    for key in payload:
        if key not in ("schema_version", "figures"):
            raise SpecError(f"{path}: unknown key {key!r} "
                            f"(known: schema_version, figures)")
    if payload.get("schema_version") != 1:
        raise SpecError(
            f"{path}: schema_version {payload.get('schema_version')!r} "
            f"is not supported (expected 1)")
    figures = payload.get("figures")
    if not isinstance(figures, list) or not figures:
        raise SpecError(f"{path}: 'figures' must be a non-empty list")
    return [spec_from_mapping(entry, base_dir=path.parent)
            for entry in figures]


def run_cli(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="apc-figures",
        description="Render publication-style figures from simulation "
                    "CSV/JSON result files.")
    parser.add_argument("--spec", metavar="FILE",
                        help="JSON spec file describing several figures")
    parser.add_argument("--kind", choices=KINDS,
                        help="figure kind for single-figure mode")
    parser.add_argument("--input", action="append", metavar="PATH",
                        help="input data file (repeat to overlay)")
    parser.add_argument("--output", metavar="PATH",
                        help="output image path (.png or .svg)")
    parser.add_argument("--style", action="append", metavar="KEY=VALUE",
                        help="style option, repeatable")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2

    try:
        if args.spec and (args.kind or args.input or args.output):
            raise SpecError(
                "give either --spec or the --kind/--input/--output "
                "flags, not both")
        if args.spec:
            specs = _specs_from_file(args.spec)
        else:
            if not (args.kind and args.input and args.output):
                parser.print_usage(file=sys.stderr)
                print("error: single-figure mode needs --kind, --input "
                      "and --output", file=sys.stderr)
                return 2
            specs = [FigureSpec(kind=args.kind, inputs=tuple(args.input),
                                output=args.output,
                                style=_style_pairs(args.style))]
    except (SpecError, SchemaError) as exc:
        print(f"figure spec error: {exc}", file=sys.stderr)
        return 2

    for spec in specs:
        try:
            out = render(spec)
        except (SpecError, SchemaError) as exc:
            print(f"schema error: {exc}", file=sys.stderr)
            return 2
        except Exception as exc:
            print(f"render failed [{spec.kind} -> {spec.output}]: "
                  f"{exc.__class__.__name__}: {exc}", file=sys.stderr)
            return 1
        print(f"[{spec.kind}] wrote {out}")
    return 0


def main() -> None:  # console-script entry point
    raise SystemExit(run_cli())
