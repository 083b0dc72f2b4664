"""Domain types, evaluation configuration and the JSONL interchange formats.

Tracks store their positions as a contiguous block of frames: ``start_frame``
plus an ``(n, 2)`` array of global-frame centers in meters. All arrays are
made read-only at construction so values can be shared freely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

SCORED_CLASSES: tuple[str, ...] = ("car", "truck", "bus")


class ValidationError(ValueError):
    """Input violates a format rule or a type invariant."""


class ParseError(ValidationError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantError(ValidationError):
    def __init__(self, scene_id: str, field_name: str, message: str) -> None:
        super().__init__(f"scene {scene_id!r}: {field_name}: {message}")
        self.scene_id = scene_id
        self.field = field_name


class Waypoint(NamedTuple):
    frame: int
    x: float
    y: float


def _frozen_array(values, shape_tail: tuple[int, ...], what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail:
        raise ValueError(f"{what}: expected shape (n, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: non-finite coordinate")
    arr.setflags(write=False)
    return arr


class _Track:
    """Shared frame bookkeeping for ground-truth and predicted tracks."""

    start_frame: int
    xy: np.ndarray

    @property
    def end_frame(self) -> int:
        """Last frame covered (inclusive)."""
        return self.start_frame + len(self.xy) - 1

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.start_frame + len(self.xy))

    @property
    def waypoints(self) -> list[Waypoint]:
        return [Waypoint(f, float(x), float(y)) for f, (x, y) in zip(self.frames, self.xy)]

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def position(self, frame: int) -> np.ndarray:
        if not self.covers(frame):
            raise KeyError(frame)
        return self.xy[frame - self.start_frame]


@dataclass(frozen=True, eq=False)
class GtTrack(_Track):
    gt_id: int
    cls: str
    start_frame: int
    xy: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "xy", _frozen_array(self.xy, (2,), f"gt track {self.gt_id}"))
        if self.start_frame < 0:
            raise ValueError(f"gt track {self.gt_id}: negative start_frame")
        if len(self.xy) == 0:
            raise ValueError(f"gt track {self.gt_id}: no waypoints")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GtTrack):
            return NotImplemented
        return (
            (self.gt_id, self.cls, self.start_frame) == (other.gt_id, other.cls, other.start_frame)
            and np.array_equal(self.xy, other.xy)
        )


@dataclass(frozen=True, eq=False)
class PredTrack(_Track):
    """A perception hypothesis. ``track_id`` carries no link to any ground truth."""

    track_id: int
    cls: str
    confidence: float
    start_frame: int
    xy: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "xy", _frozen_array(self.xy, (2,), f"pred track {self.track_id}"))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"pred track {self.track_id}: confidence {self.confidence} outside [0, 1]")
        if self.start_frame < 0:
            raise ValueError(f"pred track {self.track_id}: negative start_frame")
        if len(self.xy) == 0:
            raise ValueError(f"pred track {self.track_id}: no waypoints")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredTrack):
            return NotImplemented
        return (
            (self.track_id, self.cls, self.confidence, self.start_frame)
            == (other.track_id, other.cls, other.confidence, other.start_frame)
            and np.array_equal(self.xy, other.xy)
        )

    def replace(self, **changes) -> PredTrack:
        kw = dict(track_id=self.track_id, cls=self.cls, confidence=self.confidence,
                  start_frame=self.start_frame, xy=self.xy)
        kw.update(changes)
        return PredTrack(**kw)


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """k future modes of one predicted track, frames 1..H relative to t=0."""

    track_id: int
    modes: np.ndarray  # (k, H, 2)
    mode_probs: np.ndarray | None = None

    def __post_init__(self) -> None:
        modes = np.array(self.modes, dtype=np.float64)
        if modes.ndim != 3 or modes.shape[2] != 2 or modes.shape[0] == 0:
            raise ValueError(f"forecast {self.track_id}: modes must have shape (k, H, 2), got {modes.shape}")
        if not np.all(np.isfinite(modes)):
            raise ValueError(f"forecast {self.track_id}: non-finite coordinate")
        modes.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        if self.mode_probs is not None:
            probs = np.array(self.mode_probs, dtype=np.float64)
            if probs.shape != (modes.shape[0],):
                raise ValueError(f"forecast {self.track_id}: expected {modes.shape[0]} mode_probs")
            if np.any(probs < 0) or abs(math.fsum(probs) - 1.0) > 1e-6:
                raise ValueError(f"forecast {self.track_id}: mode_probs must be >= 0 and sum to 1")
            probs.setflags(write=False)
            object.__setattr__(self, "mode_probs", probs)

    @property
    def k(self) -> int:
        return self.modes.shape[0]

    @property
    def horizon(self) -> int:
        return self.modes.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ForecastSet):
            return NotImplemented
        if self.track_id != other.track_id or not np.array_equal(self.modes, other.modes):
            return False
        if self.mode_probs is None or other.mode_probs is None:
            return self.mode_probs is None and other.mode_probs is None
        return np.array_equal(self.mode_probs, other.mode_probs)


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    num_frames: int
    reference_frame: int
    ego_poses: np.ndarray  # (num_frames, 3): x, y, heading_rad
    gt_tracks: tuple[GtTrack, ...] = ()
    frame_rate_hz: float = 2.0

    def __post_init__(self) -> None:
        sid = self.scene_id
        poses = np.array(self.ego_poses, dtype=np.float64)
        if poses.size == 0:
            poses = poses.reshape(0, 3)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise InvariantError(sid, "ego_poses", f"expected (x, y, heading) rows, got shape {poses.shape}")
        if not np.all(np.isfinite(poses)):
            raise InvariantError(sid, "ego_poses", "non-finite value")
        if len(poses) != self.num_frames:
            raise InvariantError(
                sid, "ego_poses", f"ego pose count mismatch ({len(poses)} poses, {self.num_frames} frames)"
            )
        poses.setflags(write=False)
        object.__setattr__(self, "ego_poses", poses)
        object.__setattr__(self, "gt_tracks", tuple(self.gt_tracks))
        if not self.frame_rate_hz > 0:
            raise InvariantError(sid, "frame_rate_hz", "must be positive")
        if not 0 <= self.reference_frame < self.num_frames:
            raise InvariantError(sid, "reference_frame", f"{self.reference_frame} not in [0, {self.num_frames})")
        seen: set[int] = set()
        for t in self.gt_tracks:
            if t.gt_id in seen:
                raise InvariantError(sid, "gt_tracks", f"duplicate gt_id {t.gt_id}")
            seen.add(t.gt_id)
            if t.end_frame >= self.num_frames:
                raise InvariantError(sid, "gt_tracks", f"gt track {t.gt_id} runs past frame {self.num_frames - 1}")

    @property
    def ego_xy(self) -> np.ndarray:
        """Ego position at the reference frame."""
        return self.ego_poses[self.reference_frame, :2]

    def track(self, gt_id: int) -> GtTrack:
        for t in self.gt_tracks:
            if t.gt_id == gt_id:
                return t
        raise KeyError(gt_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            (self.scene_id, self.frame_rate_hz, self.num_frames, self.reference_frame)
            == (other.scene_id, other.frame_rate_hz, other.num_frames, other.reference_frame)
            and np.array_equal(self.ego_poses, other.ego_poses)
            and self.gt_tracks == other.gt_tracks
        )


@dataclass(frozen=True)
class EvalConfig:
    match_threshold_m: float = 2.0
    fde_threshold_m: float = 4.0
    k: int = 5
    miss_radius_m: float = 4.0
    miss_criterion: str = "fde"  # or "max_pointwise"
    horizon_frames: int = 12
    history_frames: int = 4
    moving_displacement_m: float = 2.0
    distance_bins_m: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    classes: tuple[str, ...] = SCORED_CLASSES

    def __post_init__(self) -> None:
        object.__setattr__(self, "distance_bins_m", tuple(float(b) for b in self.distance_bins_m))
        object.__setattr__(self, "classes", tuple(self.classes))
        for name in ("match_threshold_m", "fde_threshold_m", "miss_radius_m", "moving_displacement_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.k < 1 or self.horizon_frames < 1 or self.history_frames < 0:
            raise ValueError("k and horizon_frames must be >= 1, history_frames >= 0")
        if self.miss_criterion not in ("fde", "max_pointwise"):
            raise ValueError(f"unknown miss_criterion {self.miss_criterion!r}")
        bins = self.distance_bins_m
        if len(bins) < 2 or any(b1 <= b0 for b0, b1 in zip(bins, bins[1:])):
            raise ValueError("distance_bins_m must hold >= 2 strictly increasing edges")
        if not self.classes:
            raise ValueError("classes must not be empty")

    @classmethod
    def from_dict(cls, data: dict) -> EvalConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown EvalConfig fields: {sorted(unknown)}")
        return cls(**data)


def eligible_gt_agents(scene: Scene, cfg: EvalConfig) -> list[int]:
    """GT agents with a complete, moving future over the horizon, in scored classes."""
    t0 = scene.reference_frame
    tf = t0 + cfg.horizon_frames
    out = []
    for track in scene.gt_tracks:
        if track.cls not in cfg.classes:
            continue
        if not (track.covers(t0) and track.covers(tf)):
            continue
        dx, dy = track.position(tf) - track.position(t0)
        if math.hypot(dx, dy) >= cfg.moving_displacement_m:
            out.append(track.gt_id)
    return out


# ---------------------------------------------------------------- serialization

def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _pairs(arr: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in arr]


def scene_to_record(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "frame_rate_hz": float(scene.frame_rate_hz),
        "num_frames": int(scene.num_frames),
        "reference_frame": int(scene.reference_frame),
        "ego_poses": _pairs(scene.ego_poses),
        "gt_tracks": [
            {"gt_id": int(t.gt_id), "class": t.cls, "start_frame": int(t.start_frame), "xy": _pairs(t.xy)}
            for t in scene.gt_tracks
        ],
    }


def dumps_scene(scene: Scene) -> str:
    return _dumps(scene_to_record(scene))


def dump_scenes(scenes: Iterable[Scene], fp: IO[str]) -> None:
    for scene in scenes:
        fp.write(dumps_scene(scene))
        fp.write("\n")


def _require(rec: dict, key: str, kind, line: int):
    if key not in rec:
        raise ParseError(line, f"missing key {key!r}")
    value = rec[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)):
        raise ParseError(line, f"key {key!r} has wrong type {type(value).__name__}")
    return value


def _iter_records(stream: IO) -> Iterator[tuple[int, dict]]:
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(lineno, f"invalid UTF-8: {exc}") from None
        text = raw.rstrip("\n")
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed record: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise ParseError(lineno, "record is not an object")
        yield lineno, rec


def scene_from_record(rec: dict, line: int = 0) -> Scene:
    scene_id = _require(rec, "scene_id", str, line)
    tracks = []
    for i, t in enumerate(_require(rec, "gt_tracks", list, line)):
        if not isinstance(t, dict):
            raise ParseError(line, f"gt_tracks[{i}] is not an object")
        try:
            tracks.append(
                GtTrack(
                    gt_id=_require(t, "gt_id", int, line),
                    cls=_require(t, "class", str, line),
                    start_frame=_require(t, "start_frame", int, line),
                    xy=_require(t, "xy", list, line),
                )
            )
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise InvariantError(scene_id, f"gt_tracks[{i}]", str(exc)) from None
    try:
        ego = np.array(_require(rec, "ego_poses", list, line), dtype=np.float64)
    except (TypeError, ValueError):
        raise InvariantError(scene_id, "ego_poses", "not a numeric (x, y, heading) array") from None
    return Scene(
        scene_id=scene_id,
        frame_rate_hz=_require(rec, "frame_rate_hz", float, line) if "frame_rate_hz" in rec else 2.0,
        num_frames=_require(rec, "num_frames", int, line),
        reference_frame=_require(rec, "reference_frame", int, line),
        ego_poses=ego,
        gt_tracks=tuple(tracks),
    )


def load_scenes(stream: IO) -> list[Scene]:
    """Parse a ``*.scenes.jsonl`` stream (text or bytes)."""
    return [scene_from_record(rec, lineno) for lineno, rec in _iter_records(stream)]


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """One line of a predictions file: a track plus its (optional) forecast."""

    scene_id: str
    track: PredTrack
    forecast: ForecastSet | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionRecord):
            return NotImplemented
        return (self.scene_id, self.track, self.forecast) == (other.scene_id, other.track, other.forecast)


def prediction_to_record(scene_id: str, track: PredTrack, forecast: ForecastSet | None = None) -> dict:
    rec = {
        "scene_id": scene_id,
        "track_id": int(track.track_id),
        "class": track.cls,
        "confidence": float(track.confidence),
        "start_frame": int(track.start_frame),
        "xy": _pairs(track.xy),
    }
    if forecast is not None:
        rec["modes"] = [_pairs(m) for m in forecast.modes]
        if forecast.mode_probs is not None:
            rec["mode_probs"] = [float(p) for p in forecast.mode_probs]
    return rec


def dump_predictions(records: Iterable[PredictionRecord], fp: IO[str]) -> None:
    for r in records:
        fp.write(_dumps(prediction_to_record(r.scene_id, r.track, r.forecast)))
        fp.write("\n")


def load_predictions(stream: IO, scenes: Sequence[Scene] | None = None) -> list[PredictionRecord]:
    """Parse a ``*.preds.jsonl`` stream.

    When ``scenes`` is given, every record must reference a known scene and
    end at that scene's reference frame.
    """
    by_id = {s.scene_id: s for s in scenes} if scenes is not None else None
    out: list[PredictionRecord] = []
    seen: set[tuple[str, int]] = set()
    for lineno, rec in _iter_records(stream):
        scene_id = _require(rec, "scene_id", str, lineno)
        track_id = _require(rec, "track_id", int, lineno)
        try:
            track = PredTrack(
                track_id=track_id,
                cls=_require(rec, "class", str, lineno),
                confidence=_require(rec, "confidence", float, lineno),
                start_frame=_require(rec, "start_frame", int, lineno),
                xy=_require(rec, "xy", list, lineno),
            )
            forecast = None
            if "modes" in rec:
                forecast = ForecastSet(track_id, rec["modes"], rec.get("mode_probs"))
        except ValidationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, str(exc)) from None
        if (scene_id, track_id) in seen:
            raise ParseError(lineno, f"duplicate track_id {track_id} in scene {scene_id!r}")
        seen.add((scene_id, track_id))
        if by_id is not None:
            scene = by_id.get(scene_id)
            if scene is None:
                raise ParseError(lineno, f"unknown scene_id {scene_id!r}")
            if track.end_frame != scene.reference_frame:
                raise InvariantError(
                    scene_id, f"track {track_id}",
                    f"last waypoint frame {track.end_frame} != reference frame {scene.reference_frame}",
                )
        out.append(PredictionRecord(scene_id, track, forecast))
    return out


def load_forecasts(stream: IO) -> dict[tuple[str, int], ForecastSet]:
    """Parse a standalone forecasts file: ``{scene_id, track_id, modes, mode_probs?}`` per line."""
    out: dict[tuple[str, int], ForecastSet] = {}
    for lineno, rec in _iter_records(stream):
        scene_id = _require(rec, "scene_id", str, lineno)
        track_id = _require(rec, "track_id", int, lineno)
        try:
            out[(scene_id, track_id)] = ForecastSet(track_id, _require(rec, "modes", list, lineno),
                                                    rec.get("mode_probs"))
        except ValidationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, str(exc)) from None
    return out


def dump_forecasts(items: Iterable[tuple[str, ForecastSet]], fp: IO[str]) -> None:
    for scene_id, fc in items:
        rec = {"scene_id": scene_id, "track_id": int(fc.track_id), "modes": [_pairs(m) for m in fc.modes]}
        if fc.mode_probs is not None:
            rec["mode_probs"] = [float(p) for p in fc.mode_probs]
        fp.write(_dumps(rec))
        fp.write("\n")
