"""Evaluation harness for motion forecasting on top of imperfect perception."""

from .assignment import FORBIDDEN, Assignment, solve, solve_bruteforce
from .association import T0Match, MotEvents, associate_mot, match_t0
from .maps import GridSpec, Polygon, Polyline, RasterFormatError, RasterMap, ablate_channel, iou, rasterize
from .metrics import MetricRow, Report, SceneResult, ap_f, evaluate, evaluate_scene, min_ade, min_fde, miss, mota, motp
from .perturb import PerturbSpec, apply
from .scene import (
    EvalConfig, ForecastSet, GtTrack, InvariantError, ParseError, PredTrack, Scene, ValidationError,
    eligible_gt_agents, load_predictions, load_scenes,
)
from .synth import SynthSpec, cv_forecast, generate, generate_scenes

__version__ = "0.1.0"

__all__ = [
    "FORBIDDEN", "Assignment", "solve", "solve_bruteforce",
    "T0Match", "MotEvents", "associate_mot", "match_t0",
    "GridSpec", "Polygon", "Polyline", "RasterFormatError", "RasterMap", "ablate_channel", "iou", "rasterize",
    "MetricRow", "Report", "SceneResult", "ap_f", "evaluate", "evaluate_scene",
    "min_ade", "min_fde", "miss", "mota", "motp",
    "PerturbSpec", "apply",
    "EvalConfig", "ForecastSet", "GtTrack", "InvariantError", "ParseError", "PredTrack", "Scene",
    "ValidationError", "eligible_gt_agents", "load_predictions", "load_scenes",
    "SynthSpec", "cv_forecast", "generate", "generate_scenes",
]
