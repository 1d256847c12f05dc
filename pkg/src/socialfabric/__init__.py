"""Compositional primitive encoding for video relation detection.

Paired object tubelets are embedded per frame, softly assigned to K learned
primitives and pooled into a fixed-size encoding. Two stages use it: a
windowed interactivity scorer that cuts proposals, and a predicate
classifier over the proposals. Evaluation, search by example frames and a
synthetic scenario generator are included.
"""

from .encoding import SocialFabricParams, forward, init_params, sfe_backward
from .evaluation import EvalConfig, MetricReport, evaluate
from .numcore import DataError, InvalidArgument, NumericFailure, Rng
from .pipeline import RunConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "EvalConfig",
    "InvalidArgument",
    "MetricReport",
    "NumericFailure",
    "Rng",
    "RunConfig",
    "SocialFabricParams",
    "evaluate",
    "forward",
    "init_params",
    "run_pipeline",
    "sfe_backward",
]
