"""Multidimensional integration by integrand morphing and the exponential work average."""

from .core import (
    FlatReference,
    HyperRectangle,
    IntegralEstimate,
    MorphRun,
    RunWarning,
    TrajectoryRecord,
    flat_reference,
    make_domain,
)
from .propagators import PropagatorConfig, PropagatorKind

__version__ = "0.1.0"

from .engine import pilot_run, run_integration, tune_delta_max  # noqa: E402
from .expression import parse_expression  # noqa: E402
from .integrands import Integrand, Signedness, builtin, from_expression  # noqa: E402
from .oracle import cubature_3d, product_lift  # noqa: E402
from .splitting import SplitConfig, integrate_signed  # noqa: E402

__all__ = [
    "FlatReference",
    "HyperRectangle",
    "Integrand",
    "IntegralEstimate",
    "MorphRun",
    "PropagatorConfig",
    "PropagatorKind",
    "RunWarning",
    "Signedness",
    "SplitConfig",
    "TrajectoryRecord",
    "builtin",
    "cubature_3d",
    "flat_reference",
    "from_expression",
    "integrate_signed",
    "make_domain",
    "parse_expression",
    "pilot_run",
    "product_lift",
    "run_integration",
    "tune_delta_max",
]
