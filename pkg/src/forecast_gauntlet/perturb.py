"""Seeded synthetic perception errors applied to curated ground truth.

Random streams
--------------
Every stage draws from its own ``numpy.random.Generator`` backed by
``PCG64``. The 128-bit seed of a stream is the first 16 bytes (little
endian) of ``sha256(f"{seed}:{scene_id}:{stage}")``, so results depend only
on (seed, scene, stage) and never on processing order or worker count.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .scene import EvalConfig, PredTrack, Scene

STAGES = ("drop", "swap", "jitter", "hallucinate")


@dataclass(frozen=True)
class PerturbSpec:
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    loc_sigma_m: float = 0.0
    ids_rate: float = 0.0
    ids_radius_m: float = 10.0
    seed: int = 0
    # Extra per-meter noise as a function of the t=0 distance to ego.
    loc_sigma_per_m: float = 0.0
    # "iid": independent noise per waypoint; "track": one rigid offset per track.
    loc_mode: str = "iid"

    def __post_init__(self) -> None:
        if not 0.0 <= self.fn_rate <= 1.0:
            raise ValueError("fn_rate must lie in [0, 1]")
        if not 0.0 <= self.ids_rate <= 1.0:
            raise ValueError("ids_rate must lie in [0, 1]")
        if self.fp_rate < 0 or self.loc_sigma_m < 0 or self.loc_sigma_per_m < 0:
            raise ValueError("fp_rate and noise levels must be >= 0")
        if not self.ids_radius_m > 0:
            raise ValueError("ids_radius_m must be > 0")
        if self.loc_mode not in ("iid", "track"):
            raise ValueError(f"unknown loc_mode {self.loc_mode!r}")

    @classmethod
    def from_dict(cls, data: dict) -> PerturbSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown PerturbSpec fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def derive_rng(seed: int, scene_id: str, stage: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{scene_id}:{stage}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))


def drop_agents(tracks: Sequence[PredTrack], fn_rate: float, rng: np.random.Generator) -> list[PredTrack]:
    """Remove each track independently with probability ``fn_rate``."""
    if not 0.0 <= fn_rate <= 1.0:
        raise ValueError("fn_rate must lie in [0, 1]")
    draws = rng.random(len(tracks))
    return [t for t, u in zip(tracks, draws) if not u < fn_rate]


def hallucinate(
    scene: Scene,
    tracks: Sequence[PredTrack],
    fp_rate: float,
    rng: np.random.Generator,
    *,
    classes: Sequence[str] = ("car", "truck", "bus"),
    history_frames: int = 4,
    gt_count: int | None = None,
) -> list[PredTrack]:
    """Append Poisson(``fp_rate`` x GT count) fake tracks around the ego vehicle.

    Each fake sits uniformly (by area) in the 5-50 m annulus around the ego
    at t=0, moves at a constant random velocity (0-15 m/s, any heading) over
    the history window and gets a confidence in [0.3, 1.0].
    """
    if fp_rate < 0:
        raise ValueError("fp_rate must be >= 0")
    if gt_count is None:
        gt_count = sum(1 for t in scene.gt_tracks if t.covers(scene.reference_frame))
    count = int(rng.poisson(fp_rate * gt_count)) if fp_rate > 0 and gt_count > 0 else 0
    out = list(tracks)
    if count == 0:
        return out
    t0 = scene.reference_frame
    first = max(0, t0 - history_frames)
    steps = (np.arange(first, t0 + 1) - t0) / scene.frame_rate_hz  # seconds, <= 0
    ids_in_use = [t.track_id for t in tracks] + [t.gt_id for t in scene.gt_tracks]
    next_id = max(ids_in_use, default=-1) + 1
    ego = scene.ego_xy
    for i in range(count):
        radius = math.sqrt(rng.uniform(5.0 ** 2, 50.0 ** 2))
        bearing = rng.uniform(0.0, 2 * math.pi)
        speed = rng.uniform(0.0, 15.0)
        heading = rng.uniform(0.0, 2 * math.pi)
        cls = classes[int(rng.integers(len(classes)))]
        confidence = float(rng.uniform(0.3, 1.0))
        p0 = ego + radius * np.array([math.cos(bearing), math.sin(bearing)])
        v = speed * np.array([math.cos(heading), math.sin(heading)])
        xy = p0[None, :] + steps[:, None] * v[None, :]
        out.append(PredTrack(next_id + i, cls, confidence, first, xy))
    return out


def jitter_localization(
    tracks: Sequence[PredTrack],
    loc_sigma_m: float,
    rng: np.random.Generator,
    *,
    sigma_per_m: float = 0.0,
    ego_xy: np.ndarray | None = None,
    mode: str = "iid",
) -> list[PredTrack]:
    """Add Gaussian noise N(0, sigma^2) per axis to every waypoint.

    The noise std of a track is ``loc_sigma_m + sigma_per_m * d`` where ``d``
    is the distance from its last waypoint to ``ego_xy``.
    """
    if loc_sigma_m < 0 or sigma_per_m < 0:
        raise ValueError("noise levels must be >= 0")
    if sigma_per_m > 0 and ego_xy is None:
        raise ValueError("distance-dependent noise needs ego_xy")
    out = []
    for t in tracks:
        sigma = loc_sigma_m
        if sigma_per_m > 0:
            sigma += sigma_per_m * float(np.hypot(*(t.xy[-1] - ego_xy)))
        if mode == "iid":
            noise = rng.normal(0.0, 1.0, size=t.xy.shape)
        elif mode == "track":
            noise = np.broadcast_to(rng.normal(0.0, 1.0, size=2), t.xy.shape)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if sigma == 0:
            out.append(t)
        else:
            out.append(t.replace(xy=t.xy + sigma * noise))
    return out


def swap_identities(
    tracks: Sequence[PredTrack],
    ids_rate: float,
    ids_radius_m: float,
    rng: np.random.Generator,
) -> tuple[list[PredTrack], list[tuple[int, int, int]]]:
    """Exchange the pasts of nearby track pairs.

    Pairs whose last (t=0) centers lie within ``ids_radius_m`` are visited in
    random order, each selected with probability ``ids_rate``; a track joins
    at most one swap. A selected pair exchanges all waypoints before a frame
    drawn uniformly from the frames where both tracks have a past, so each
    keeps its own t=0 head. Returns the tracks and ``(track_a, track_b,
    frame)`` per executed swap.
    """
    if not 0.0 <= ids_rate <= 1.0:
        raise ValueError("ids_rate must lie in [0, 1]")
    tracks = list(tracks)
    n = len(tracks)
    pairs = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if float(np.hypot(*(tracks[i].xy[-1] - tracks[j].xy[-1]))) <= ids_radius_m
    ]
    order = rng.permutation(len(pairs)) if pairs else []
    selected = rng.random(len(pairs)) < ids_rate
    busy: set[int] = set()
    executed = []
    for k in order:
        i, j = pairs[k]
        if not selected[k] or i in busy or j in busy:
            continue
        a, b = tracks[i], tracks[j]
        if a.end_frame != b.end_frame:
            continue
        lo = max(a.start_frame, b.start_frame) + 1
        hi = a.end_frame
        if lo > hi:
            continue
        f = int(rng.integers(lo, hi + 1))
        a_xy = np.concatenate([b.xy[: f - b.start_frame], a.xy[f - a.start_frame:]])
        b_xy = np.concatenate([a.xy[: f - a.start_frame], b.xy[f - b.start_frame:]])
        tracks[i] = a.replace(start_frame=b.start_frame, xy=a_xy)
        tracks[j] = b.replace(start_frame=a.start_frame, xy=b_xy)
        busy.update((i, j))
        executed.append((a.track_id, b.track_id, f))
    return tracks, executed


def gt_to_predictions(scene: Scene, history_frames: int) -> list[PredTrack]:
    """Ground-truth tracks visible at t=0 as perfect detections over the history window."""
    t0 = scene.reference_frame
    first = max(0, t0 - history_frames)
    out = []
    for t in scene.gt_tracks:
        if not t.covers(t0):
            continue
        start = max(first, t.start_frame)
        out.append(PredTrack(t.gt_id, t.cls, 1.0, start, t.xy[start - t.start_frame: t0 - t.start_frame + 1]))
    return out


def apply(scene: Scene, spec: PerturbSpec, cfg: EvalConfig | None = None) -> tuple[list[PredTrack], list[dict]]:
    """Turn the scene's GT into perturbed predictions: drop, swap, jitter, hallucinate.

    Returns the predicted tracks and a provenance log with one entry per
    injected error (``{"stage", "scene_id", "detail"}``).
    """
    cfg = cfg or EvalConfig()
    sid = scene.scene_id
    log: list[dict] = []
    clean = gt_to_predictions(scene, cfg.history_frames)

    tracks = drop_agents(clean, spec.fn_rate, derive_rng(spec.seed, sid, "drop"))
    kept = {t.track_id for t in tracks}
    for t in clean:
        if t.track_id not in kept:
            log.append({"stage": "drop", "scene_id": sid, "detail": {"track_id": t.track_id}})

    tracks, swaps = swap_identities(tracks, spec.ids_rate, spec.ids_radius_m, derive_rng(spec.seed, sid, "swap"))
    for a, b, f in swaps:
        log.append({"stage": "swap", "scene_id": sid, "detail": {"track_ids": [a, b], "frame": f}})

    if spec.loc_sigma_m > 0 or spec.loc_sigma_per_m > 0:
        before = {t.track_id: t for t in tracks}
        tracks = jitter_localization(
            tracks, spec.loc_sigma_m, derive_rng(spec.seed, sid, "jitter"),
            sigma_per_m=spec.loc_sigma_per_m, ego_xy=scene.ego_xy, mode=spec.loc_mode,
        )
        for t in tracks:
            offset = np.hypot(*(t.xy - before[t.track_id].xy).T)
            log.append({"stage": "jitter", "scene_id": sid, "detail": {
                "track_id": t.track_id, "mean_offset_m": float(offset.mean()), "t0_offset_m": float(offset[-1]),
            }})

    n_before = len(tracks)
    scored_gt = sum(1 for t in clean if t.cls in cfg.classes)
    tracks = hallucinate(scene, tracks, spec.fp_rate, derive_rng(spec.seed, sid, "hallucinate"),
                         classes=cfg.classes, history_frames=cfg.history_frames, gt_count=scored_gt)
    for t in tracks[n_before:]:
        log.append({"stage": "hallucinate", "scene_id": sid, "detail": {
            "track_id": t.track_id, "class": t.cls, "confidence": t.confidence,
            "x": float(t.xy[-1, 0]), "y": float(t.xy[-1, 1]),
        }})
    return tracks, log
