"""Matching predictions to ground truth: the t=0 forecasting match and CLEAR-MOT association."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assignment import FORBIDDEN, solve
from .scene import EvalConfig, PredTrack, Scene, eligible_gt_agents


@dataclass(frozen=True)
class T0Match:
    pairs: tuple[tuple[int, int], ...]  # (gt_id, track_id)
    missed_gt: tuple[int, ...]
    false_tracks: tuple[int, ...]
    distances: tuple[float, ...] = ()  # center distance per pair


def _distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    d = a[:, None, :] - b[None, :, :]
    return np.hypot(d[..., 0], d[..., 1])


def gated_costs(gt_xy: np.ndarray, pred_xy: np.ndarray, gate: float) -> np.ndarray:
    """Center-distance costs with pairs farther than ``gate`` forbidden."""
    dist = _distance_matrix(gt_xy, pred_xy)
    return np.where(dist <= gate, dist, FORBIDDEN)


def scored_predictions(preds: Sequence[PredTrack], cfg: EvalConfig) -> list[PredTrack]:
    return [p for p in preds if p.cls in cfg.classes]


def match_t0(scene: Scene, preds: Sequence[PredTrack], cfg: EvalConfig) -> T0Match:
    """Gated Hungarian match between eligible GT and predictions at the reference frame.

    Only same-class pairs are feasible. Predictions outside ``cfg.classes``
    take no part in the match.
    """
    t0 = scene.reference_frame
    eligible = set(eligible_gt_agents(scene, cfg))
    gts = [t for t in scene.gt_tracks if t.gt_id in eligible]
    cand = [p for p in scored_predictions(preds, cfg) if p.covers(t0)]
    gt_xy = np.array([t.position(t0) for t in gts]).reshape(-1, 2)
    pr_xy = np.array([p.position(t0) for p in cand]).reshape(-1, 2)
    costs = gated_costs(gt_xy, pr_xy, cfg.match_threshold_m)
    if costs.size:
        same = np.array([[g.cls == p.cls for p in cand] for g in gts], dtype=bool)
        costs = np.where(same, costs, FORBIDDEN)
    result = solve(costs)
    return T0Match(
        pairs=tuple((gts[r].gt_id, cand[c].track_id) for r, c in result.pairs),
        missed_gt=tuple(gts[r].gt_id for r in result.unmatched_rows),
        false_tracks=tuple(cand[c].track_id for c in result.unmatched_cols),
        distances=tuple(float(costs[r, c]) for r, c in result.pairs),
    )


@dataclass(frozen=True)
class FrameEvents:
    frame: int
    matches: tuple[tuple[int, int, float], ...]  # (gt_id, track_id, distance_m)
    fp_tracks: tuple[int, ...]
    fn_gts: tuple[int, ...]
    ids_gts: tuple[int, ...]  # GT objects that switched identity in this frame

    @property
    def fp_count(self) -> int:
        return len(self.fp_tracks)

    @property
    def fn_count(self) -> int:
        return len(self.fn_gts)

    @property
    def ids_count(self) -> int:
        return len(self.ids_gts)


@dataclass(frozen=True)
class MotEvents:
    frames: tuple[FrameEvents, ...] = field(default_factory=tuple)

    @property
    def fp(self) -> int:
        return sum(f.fp_count for f in self.frames)

    @property
    def fn(self) -> int:
        return sum(f.fn_count for f in self.frames)

    @property
    def ids(self) -> int:
        return sum(f.ids_count for f in self.frames)

    @property
    def gt_total(self) -> int:
        return sum(len(f.matches) + f.fn_count for f in self.frames)

    @property
    def match_count(self) -> int:
        return sum(len(f.matches) for f in self.frames)

    @property
    def match_distance_sum(self) -> float:
        return math.fsum(d for f in self.frames for _, _, d in f.matches)


def association_window(scene: Scene, cfg: EvalConfig) -> range:
    t0 = scene.reference_frame
    return range(max(0, t0 - cfg.history_frames), t0 + 1)


def associate_mot(scene: Scene, preds: Sequence[PredTrack], cfg: EvalConfig) -> MotEvents:
    """Frame-by-frame CLEAR-MOT association over the history window.

    Per frame the gated Hungarian solver picks a maximum-cardinality
    matching; among those it keeps as many of the previous frame's
    correspondences as possible, then minimizes total distance. A GT object
    counts an identity switch whenever it is matched to a track other than
    the last one it was matched to. Association is class-agnostic over
    ``cfg.classes``.
    """
    gate = cfg.match_threshold_m
    gts = [t for t in scene.gt_tracks if t.cls in cfg.classes]
    cand = scored_predictions(preds, cfg)
    previous: dict[int, int] = {}  # gt_id -> track_id matched in the previous frame
    last_matched: dict[int, int] = {}  # gt_id -> most recent track_id ever matched
    frames = []
    for f in association_window(scene, cfg):
        g_here = [t for t in gts if t.covers(f)]
        p_here = [p for p in cand if p.covers(f)]
        current: dict[int, tuple[int, float]] = {}
        if g_here and p_here:
            dist = gated_costs(
                np.array([t.position(f) for t in g_here]),
                np.array([p.position(f) for p in p_here]),
                gate,
            )
            # Any non-carried pair costs more than every feasible distance sum.
            penalty = gate * min(dist.shape) + 1.0
            carried = np.array(
                [[previous.get(t.gt_id) == p.track_id for p in p_here] for t in g_here], dtype=bool
            )
            costs = np.where(carried, dist, dist + penalty)
            for r, c in solve(costs).pairs:
                current[g_here[r].gt_id] = (p_here[c].track_id, float(dist[r, c]))
        switches = []
        for gt_id, (track_id, _) in current.items():
            if gt_id in last_matched and last_matched[gt_id] != track_id:
                switches.append(gt_id)
            last_matched[gt_id] = track_id
        matched_tracks = {tid for tid, _ in current.values()}
        frames.append(
            FrameEvents(
                frame=f,
                matches=tuple(sorted((g, tid, d) for g, (tid, d) in current.items())),
                fp_tracks=tuple(sorted(p.track_id for p in p_here if p.track_id not in matched_tracks)),
                fn_gts=tuple(sorted(t.gt_id for t in g_here if t.gt_id not in current)),
                ids_gts=tuple(sorted(switches)),
            )
        )
        previous = {g: tid for g, (tid, _) in current.items()}
    return MotEvents(tuple(frames))
