"""Publication-style figures from simulation result files.

The package reads the CSV/JSON formats documented in schemas.py and
renders five figure kinds (curve, decay, scaling, resonance,
pairprob). It consumes files only; it never imports the simulator.
"""

from apcfigures.errors import SchemaError, SpecError
from apcfigures.render import (KINDS, FigureSpec, build_figure, render,
                               spec_from_mapping)
from apcfigures.schemas import (SUPPORTED_SCHEMA_VERSION, CurveData,
                                FitBlock, ReportData, ResonanceData,
                                TrajectoryData, read_curve, read_report,
                                read_resonance, read_trajectory)

__version__ = "0.1.0"

__all__ = [
    "SchemaError", "SpecError",
    "KINDS", "FigureSpec", "build_figure", "render", "spec_from_mapping",
    "SUPPORTED_SCHEMA_VERSION", "CurveData", "FitBlock", "ReportData",
    "ResonanceData", "TrajectoryData",
    "read_curve", "read_report", "read_resonance", "read_trajectory",
    "__version__",
]
