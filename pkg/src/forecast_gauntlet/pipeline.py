"""Batch orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from .metrics import Report, SceneResult, build_report, evaluate_scene
from .perturb import PerturbSpec, apply
from .scene import EvalConfig, ForecastSet, PredTrack, Scene
from .synth import cv_forecast

JOBS_ENV = "FORECAST_GAUNTLET_JOBS"
AXES = ("fn", "fp", "loc", "ids")

T = TypeVar("T")
R = TypeVar("R")


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        jobs = int(os.environ.get(JOBS_ENV, "1") or 1)
    return max(1, int(jobs))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Order-preserving map; results never depend on ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (jobs * 4))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def baseline_forecasts(preds: Iterable[PredTrack], cfg: EvalConfig) -> dict[int, ForecastSet]:
    return {p.track_id: cv_forecast(p, cfg.k, cfg.horizon_frames) for p in preds}


@dataclass(frozen=True)
class PerturbJob:
    scene: Scene
    spec: PerturbSpec
    cfg: EvalConfig


def perturb_and_score(job: PerturbJob) -> SceneResult:
    """Perturb one scene, forecast with the constant-velocity baseline, evaluate."""
    preds, _ = apply(job.scene, job.spec, job.cfg)
    return evaluate_scene(job.scene, preds, baseline_forecasts(preds, job.cfg), job.cfg)


def run_perturbed(scenes: Sequence[Scene], spec: PerturbSpec, cfg: EvalConfig, jobs: int = 1) -> Report:
    results = parallel_map(perturb_and_score, [PerturbJob(s, spec, cfg) for s in scenes], jobs)
    return build_report(results, cfg)


@dataclass(frozen=True)
class SweepMapping:
    """Scalar noise level L in [0, 1] -> per-axis perturbation parameters."""

    fn_rate_per_level: float = 1.0
    fp_rate_per_level: float = 1.0
    loc_sigma_m_per_level: float = 2.0
    ids_rate_per_level: float = 1.0

    def spec(self, axis: str, level: float, seed: int, base: PerturbSpec | None = None) -> PerturbSpec:
        base = base or PerturbSpec()
        if axis == "fn":
            return replace(base, fn_rate=min(1.0, level * self.fn_rate_per_level), seed=seed)
        if axis == "fp":
            return replace(base, fp_rate=level * self.fp_rate_per_level, seed=seed)
        if axis == "loc":
            return replace(base, loc_sigma_m=level * self.loc_sigma_m_per_level, seed=seed)
        if axis == "ids":
            return replace(base, ids_rate=min(1.0, level * self.ids_rate_per_level), seed=seed)
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


SWEEP_METRICS = ("map_f", "min_ade", "min_fde", "mr", "mota", "motp", "fp", "fn", "ids")


def sweep(
    scenes: Sequence[Scene],
    axis: str,
    levels: Sequence[float],
    seeds: Sequence[int],
    cfg: EvalConfig,
    *,
    mapping: SweepMapping | None = None,
    base: PerturbSpec | None = None,
    jobs: int = 1,
) -> list[tuple[float, int, Report]]:
    """Evaluate every (level, seed); the same seed is reused across levels."""
    mapping = mapping or SweepMapping()
    jobs_list = []
    keys = []
    for level in levels:
        for seed in seeds:
            spec = mapping.spec(axis, float(level), int(seed), base)
            keys.append((float(level), int(seed)))
            jobs_list.extend(PerturbJob(s, spec, cfg) for s in scenes)
    results = parallel_map(perturb_and_score, jobs_list, jobs)
    n = len(scenes)
    return [(lvl, seed, build_report(results[i * n:(i + 1) * n], cfg)) for i, (lvl, seed) in enumerate(keys)]


def group_predictions(records) -> tuple[dict[str, list[PredTrack]], dict[str, dict[int, ForecastSet]]]:
    preds: dict[str, list[PredTrack]] = {}
    forecasts: dict[str, dict[int, ForecastSet]] = {}
    for r in records:
        preds.setdefault(r.scene_id, []).append(r.track)
        if r.forecast is not None:
            forecasts.setdefault(r.scene_id, {})[r.track.track_id] = r.forecast
    return preds, forecasts


@dataclass(frozen=True)
class EvalJob:
    scene: Scene
    preds: tuple[PredTrack, ...]
    forecasts: Mapping[int, ForecastSet]
    cfg: EvalConfig
    strict: bool = False


def score_job(job: EvalJob) -> SceneResult:
    return evaluate_scene(job.scene, job.preds, job.forecasts, job.cfg, strict=job.strict)


def evaluate_files(
    scenes: Sequence[Scene],
    preds: Mapping[str, Sequence[PredTrack]],
    forecasts: Mapping[str, Mapping[int, ForecastSet]],
    cfg: EvalConfig,
    *,
    strict: bool = False,
    jobs: int = 1,
) -> list[SceneResult]:
    work = [
        EvalJob(s, tuple(preds.get(s.scene_id, ())), dict(forecasts.get(s.scene_id, {})), cfg, strict)
        for s in scenes
    ]
    return parallel_map(score_job, work, jobs)
