"""Forecasting and tracking metrics.

Per-scene evaluation produces a :class:`SceneResult` holding raw events only
(per-agent errors, unmatched tracks, MOT event log). Reports are built from a
collection of scene results with ``math.fsum`` and a total ordering of
predictions, so the result does not depend on the order in which scenes were
processed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .association import MotEvents, associate_mot, match_t0
from .scene import EvalConfig, ForecastSet, PredTrack, Scene, ValidationError, _Track

log = logging.getLogger(__name__)

AP_RECALL_POINTS = 101


class MissingForecastError(ValidationError):
    pass


def _check_shapes(gt_future: np.ndarray, modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt_future, dtype=np.float64)
    md = np.asarray(modes, dtype=np.float64)
    if md.ndim == 2:
        md = md[None]
    if gt.ndim != 2 or gt.shape[1] != 2 or md.ndim != 3 or md.shape[2] != 2:
        raise ValueError(f"expected gt (H, 2) and modes (k, H, 2), got {gt.shape} and {md.shape}")
    if md.shape[1] != gt.shape[0]:
        raise ValueError(f"length mismatch: forecast horizon {md.shape[1]} vs ground truth {gt.shape[0]}")
    if md.shape[0] == 0 or gt.shape[0] == 0:
        raise ValueError("empty forecast")
    return gt, md


def _pointwise(gt: np.ndarray, md: np.ndarray) -> np.ndarray:
    diff = md - gt[None]
    return np.hypot(diff[..., 0], diff[..., 1])  # (k, H)


def min_ade(gt_future, modes) -> float:
    """Smallest mean displacement over the k modes."""
    gt, md = _check_shapes(gt_future, modes)
    return float(_pointwise(gt, md).mean(axis=1).min())


def min_fde(gt_future, modes) -> float:
    """Smallest final-frame displacement over the k modes."""
    gt, md = _check_shapes(gt_future, modes)
    return float(_pointwise(gt, md)[:, -1].min())


def miss(gt_future, modes, x: float, criterion: str = "fde") -> bool:
    """True iff no mode comes within ``x`` meters of the ground truth.

    ``criterion="fde"`` tests the final frame only; ``"max_pointwise"``
    requires the whole mode to stay within ``x``.
    """
    if not x > 0:
        raise ValueError("miss radius must be > 0")
    gt, md = _check_shapes(gt_future, modes)
    d = _pointwise(gt, md)
    if criterion == "fde":
        per_mode = d[:, -1]
    elif criterion == "max_pointwise":
        per_mode = d.max(axis=1)
    else:
        raise ValueError(f"unknown miss criterion {criterion!r}")
    return bool(np.all(per_mode > x))


def mota(fp: int, fn: int, ids: int, gt_total: int) -> float:
    if gt_total <= 0:
        raise ZeroDivisionError("MOTA is undefined when there are no ground-truth objects")
    return 1.0 - (fp + fn + ids) / gt_total


def motp(match_distance_sum: float, match_count: int) -> float:
    if match_count <= 0:
        raise ValueError("MOTP is undefined without matches")
    return match_distance_sum / match_count


# ------------------------------------------------------------------ per scene

@dataclass(frozen=True)
class ForecastScore:
    scene_id: str
    gt_id: int
    track_id: int
    cls: str
    confidence: float
    min_ade_m: float | None  # None when the track had no forecast
    min_fde_m: float | None
    missed: bool
    distance_to_ego_m: float


@dataclass(frozen=True)
class FalseTrack:
    scene_id: str
    track_id: int
    cls: str
    confidence: float
    distance_to_ego_m: float


@dataclass(frozen=True)
class MissedGt:
    scene_id: str
    gt_id: int
    cls: str
    distance_to_ego_m: float


@dataclass(frozen=True)
class SceneResult:
    scene_id: str
    scores: tuple[ForecastScore, ...]
    false_tracks: tuple[FalseTrack, ...]
    missed_gt: tuple[MissedGt, ...]
    mot: MotEvents
    gt_info: Mapping[int, tuple[str, float]] = field(default_factory=dict)  # gt_id -> (class, distance)
    pred_info: Mapping[int, tuple[str, float]] = field(default_factory=dict)


def _distance_to_ego(track: _Track, scene: Scene) -> float:
    t0 = scene.reference_frame
    f = min(max(t0, track.start_frame), track.end_frame)
    dx, dy = track.position(f) - scene.ego_xy
    return math.hypot(dx, dy)


def _top_modes(fc: ForecastSet, k: int) -> np.ndarray:
    if fc.k <= k:
        return fc.modes
    if fc.mode_probs is None:
        return fc.modes[:k]
    order = sorted(range(fc.k), key=lambda i: (-fc.mode_probs[i], i))[:k]
    return fc.modes[sorted(order)]


def evaluate_scene(
    scene: Scene,
    preds: Sequence[PredTrack],
    forecasts: Mapping[int, ForecastSet],
    cfg: EvalConfig,
    *,
    strict: bool = False,
) -> SceneResult:
    """Match, score forecasts and associate tracks for a single scene.

    ``forecasts`` maps ``track_id`` to the forecast for that track. A matched
    track without a forecast raises :class:`MissingForecastError` when
    ``strict``; otherwise it is logged and counted as a missed forecast.
    """
    t0 = scene.reference_frame
    match = match_t0(scene, preds, cfg)
    by_track = {p.track_id: p for p in preds}
    gt_by_id = {t.gt_id: t for t in scene.gt_tracks}
    future = range(t0 + 1, t0 + cfg.horizon_frames + 1)

    scores = []
    for gt_id, track_id in match.pairs:
        gt = gt_by_id[gt_id]
        pred = by_track[track_id]
        dist = _distance_to_ego(gt, scene)
        fc = forecasts.get(track_id)
        if fc is None:
            if strict:
                raise MissingForecastError(f"scene {scene.scene_id!r}: no forecast for track {track_id}")
            log.warning("scene %s: no forecast for matched track %d, counted as a miss", scene.scene_id, track_id)
            scores.append(ForecastScore(scene.scene_id, gt_id, track_id, gt.cls, pred.confidence,
                                        None, None, True, dist))
            continue
        if fc.horizon != cfg.horizon_frames:
            raise ValidationError(
                f"scene {scene.scene_id!r}: forecast for track {track_id} has {fc.horizon} frames,"
                f" expected {cfg.horizon_frames}"
            )
        gt_future = np.array([gt.position(f) for f in future])
        modes = _top_modes(fc, cfg.k)
        scores.append(
            ForecastScore(
                scene.scene_id, gt_id, track_id, gt.cls, pred.confidence,
                min_ade(gt_future, modes), min_fde(gt_future, modes),
                miss(gt_future, modes, cfg.miss_radius_m, cfg.miss_criterion), dist,
            )
        )
    false_tracks = tuple(
        FalseTrack(scene.scene_id, tid, by_track[tid].cls, by_track[tid].confidence,
                   _distance_to_ego(by_track[tid], scene))
        for tid in match.false_tracks
    )
    missed = tuple(
        MissedGt(scene.scene_id, g, gt_by_id[g].cls, _distance_to_ego(gt_by_id[g], scene))
        for g in match.missed_gt
    )
    mot = associate_mot(scene, preds, cfg)
    return SceneResult(
        scene_id=scene.scene_id,
        scores=tuple(scores),
        false_tracks=false_tracks,
        missed_gt=missed,
        mot=mot,
        gt_info={t.gt_id: (t.cls, _distance_to_ego(t, scene)) for t in scene.gt_tracks},
        pred_info={p.track_id: (p.cls, _distance_to_ego(p, scene)) for p in preds},
    )


# ------------------------------------------------------------------ AP_f

def average_precision(entries: Iterable[tuple[float, tuple, bool]], num_gt: int) -> float | None:
    """101-point interpolated AP.

    ``entries`` are ``(confidence, tie_key, is_true_positive)``; ranking is by
    descending confidence then ascending ``tie_key``. Precision at recall
    level r is the best precision reached at any recall >= r.
    """
    ranked = sorted(entries, key=lambda e: (-e[0], e[1]))
    if num_gt == 0:
        return 0.0 if ranked else None
    if not ranked:
        return 0.0
    tp = np.cumsum([e[2] for e in ranked], dtype=np.int64)
    seen = np.arange(1, len(ranked) + 1, dtype=np.int64)
    precision = tp / seen
    # Best precision at or after each rank.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for level in range(AP_RECALL_POINTS):
        # recall >= level/100  <=>  100 * tp >= level * num_gt, kept in integers
        reach = np.nonzero(100 * tp >= level * num_gt)[0]
        if reach.size:
            total += envelope[reach[0]]
    return total / AP_RECALL_POINTS


def is_true_positive(score: ForecastScore, cfg: EvalConfig) -> bool:
    return score.min_fde_m is not None and score.min_fde_m <= cfg.fde_threshold_m


def ap_f(
    cls: str,
    scores: Sequence[ForecastScore],
    false_tracks: Sequence[FalseTrack],
    missed_gt_count: int,
    cfg: EvalConfig,
) -> float | None:
    """Forecasting AP for one class.

    A prediction is a true positive when it is matched at t=0 and its minFDE
    is within ``cfg.fde_threshold_m``; matched-but-inaccurate and unmatched
    predictions are false positives. Recall is relative to the eligible GT
    of the class (matched plus missed). ``None`` when the class has neither
    GT nor predictions.
    """
    matched = [s for s in scores if s.cls == cls]
    fps = [f for f in false_tracks if f.cls == cls]
    entries = [(s.confidence, (s.scene_id, s.track_id), is_true_positive(s, cfg)) for s in matched]
    entries += [(f.confidence, (f.scene_id, f.track_id), False) for f in fps]
    return average_precision(entries, len(matched) + missed_gt_count)


def map_f(ap_values: Iterable[float | None]) -> float | None:
    defined = [a for a in ap_values if a is not None]
    if not defined:
        return None
    return math.fsum(defined) / len(defined)


# ------------------------------------------------------------------ reports

@dataclass(frozen=True)
class MetricRow:
    map_f: float | None
    min_ade: float | None
    min_fde: float | None
    mr: float | None
    mota: float | None
    motp: float | None
    fp: int
    fn: int
    ids: int
    eligible_gt: int
    matched: int
    missed_gt: int
    false_tracks: int
    gt_total: int
    match_count: int
    match_distance_sum: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Report:
    overall: MetricRow
    per_class: dict[str, MetricRow]
    per_distance_bin: dict[tuple[float, float], MetricRow]

    @property
    def counts(self) -> dict[str, int]:
        o = self.overall
        return {"eligible_gt": o.eligible_gt, "matched": o.matched,
                "missed_gt": o.missed_gt, "false_tracks": o.false_tracks}


Selector = Callable[[str, float], bool]  # (class, distance_to_ego) -> included


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def compute_row(results: Sequence[SceneResult], cfg: EvalConfig, select: Selector | None = None,
                ap_classes: Sequence[str] | None = None) -> MetricRow:
    """Aggregate one report row over the events accepted by ``select``.

    Forecast events and MOT events on GT objects are selected by the GT's
    class and distance; unmatched predictions by their own.
    """
    sel = select or (lambda c, d: True)
    scores = [s for r in results for s in r.scores if sel(s.cls, s.distance_to_ego_m)]
    fts = [f for r in results for f in r.false_tracks if sel(f.cls, f.distance_to_ego_m)]
    missed = [m for r in results for m in r.missed_gt if sel(m.cls, m.distance_to_ego_m)]

    fp = fn = ids = 0
    dists: list[float] = []
    for r in results:
        g_ok = {g for g, (c, d) in r.gt_info.items() if sel(c, d)}
        p_ok = {t for t, (c, d) in r.pred_info.items() if sel(c, d)}
        for fr in r.mot.frames:
            dists.extend(d for g, _, d in fr.matches if g in g_ok)
            fn += sum(1 for g in fr.fn_gts if g in g_ok)
            ids += sum(1 for g in fr.ids_gts if g in g_ok)
            fp += sum(1 for t in fr.fp_tracks if t in p_ok)
    fn_and_matches = fn + len(dists)

    classes = ap_classes if ap_classes is not None else cfg.classes
    aps = []
    for c in classes:
        n_missed = sum(1 for m in missed if m.cls == c)
        aps.append(ap_f(c, scores, fts, n_missed, cfg))

    with_fc = [s for s in scores if s.min_ade_m is not None]
    return MetricRow(
        map_f=map_f(aps),
        min_ade=_mean([s.min_ade_m for s in with_fc]),
        min_fde=_mean([s.min_fde_m for s in with_fc]),
        mr=(sum(s.missed for s in scores) / len(scores)) if scores else None,
        mota=mota(fp, fn, ids, fn_and_matches) if fn_and_matches else None,
        motp=motp(math.fsum(dists), len(dists)) if dists else None,
        fp=fp,
        fn=fn,
        ids=ids,
        eligible_gt=len(scores) + len(missed),
        matched=len(scores),
        missed_gt=len(missed),
        false_tracks=len(fts),
        gt_total=fn_and_matches,
        match_count=len(dists),
        match_distance_sum=math.fsum(dists),
    )


def distance_bins(edges: Sequence[float]) -> list[tuple[float, float]]:
    """Half-open bins from ``edges`` plus an overflow bin past the last edge."""
    bins = [(float(a), float(b)) for a, b in zip(edges, edges[1:])]
    bins.append((float(edges[-1]), math.inf))
    if edges[0] > 0:
        bins.insert(0, (-math.inf, float(edges[0])))
    return bins


def _bin_populated(results: Sequence[SceneResult], lo: float, hi: float) -> bool:
    inside = lambda d: lo <= d < hi  # noqa: E731
    for r in results:
        if any(inside(s.distance_to_ego_m) for s in r.scores) or any(inside(m.distance_to_ego_m) for m in r.missed_gt):
            return True
        if any(inside(f.distance_to_ego_m) for f in r.false_tracks):
            return True
        touched_g = {g for fr in r.mot.frames for g in (*fr.fn_gts, *(m[0] for m in fr.matches))}
        if any(inside(r.gt_info[g][1]) for g in touched_g):
            return True
        touched_p = {t for fr in r.mot.frames for t in fr.fp_tracks}
        if any(inside(r.pred_info[t][1]) for t in touched_p):
            return True
    return False


def stratify(results: Sequence[SceneResult], cfg: EvalConfig,
             edges: Sequence[float] | None = None) -> dict[tuple[float, float], MetricRow]:
    """Per distance-to-ego bin rows; bins without any event are omitted."""
    edges = cfg.distance_bins_m if edges is None else tuple(edges)
    if len(edges) < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing")
    out = {}
    for lo, hi in distance_bins(edges):
        if _bin_populated(results, lo, hi):
            out[(lo, hi)] = compute_row(results, cfg, lambda c, d, lo=lo, hi=hi: c in cfg.classes and lo <= d < hi)
    return out


def build_report(results: Iterable[SceneResult], cfg: EvalConfig) -> Report:
    results = list(results)
    in_scope = lambda c, d: c in cfg.classes  # noqa: E731
    overall = compute_row(results, cfg, in_scope)
    per_class = {
        c: compute_row(results, cfg, lambda k, d, c=c: k == c, ap_classes=[c]) for c in cfg.classes
    }
    return Report(overall=overall, per_class=per_class, per_distance_bin=stratify(results, cfg))


def evaluate(
    scenes: Sequence[Scene],
    preds: Mapping[str, Sequence[PredTrack]],
    forecasts: Mapping[str, Mapping[int, ForecastSet]],
    cfg: EvalConfig,
    *,
    strict: bool = False,
) -> Report:
    """Convenience wrapper: evaluate every scene and build one report."""
    results = [
        evaluate_scene(s, preds.get(s.scene_id, ()), forecasts.get(s.scene_id, {}), cfg, strict=strict)
        for s in scenes
    ]
    return build_report(results, cfg)
