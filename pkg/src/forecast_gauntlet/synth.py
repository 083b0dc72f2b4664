"""Synthetic scenes with analytic lane geometry and a constant-velocity forecaster.

Scenes are generated independently per index from
``PCG64(SeedSequence([seed, index]))``, so any subset can be regenerated in
any order or in parallel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .maps import GridSpec, Polygon, Polyline, RasterMap, rasterize
from .scene import ForecastSet, GtTrack, PredTrack, Scene

LANE_WIDTH_M = 3.5
FAN_STEP_DEG = 5.0


@dataclass(frozen=True)
class SynthSpec:
    num_scenes: int = 10
    agents_per_scene: tuple[int, int] = (3, 8)  # inclusive
    speed_range: tuple[float, float] = (2.0, 12.0)
    turn_rate_range: tuple[float, float] = (0.0, 0.0)  # rad/s
    layout: str = "straight"  # straight | curved | crossing
    extent_m: float = 100.0
    seed: int = 0
    ego_speed_range: tuple[float, float] = (0.0, 10.0)
    lanes_per_direction: int = 2
    class_weights: tuple[tuple[str, float], ...] = (("car", 0.7), ("truck", 0.2), ("bus", 0.1))
    min_gap_m: float = 4.0
    frame_rate_hz: float = 2.0
    history_frames: int = 4
    horizon_frames: int = 12
    resolution_m_per_px: float = 0.5
    curve_radius_m: float = 60.0

    def __post_init__(self) -> None:
        for name in ("agents_per_scene", "speed_range", "turn_rate_range", "ego_speed_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (type(lo)(lo), type(hi)(hi)))
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"{name} must be a finite range with lo <= hi")
        object.__setattr__(self, "class_weights", tuple((str(c), float(w)) for c, w in self.class_weights))
        if self.num_scenes < 0 or self.agents_per_scene[0] < 0:
            raise ValueError("counts must be >= 0")
        if self.speed_range[0] < 0 or self.ego_speed_range[0] < 0:
            raise ValueError("speeds must be >= 0")
        if self.layout not in ("straight", "curved", "crossing"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if not self.extent_m > 0 or self.lanes_per_direction < 1:
            raise ValueError("extent_m must be > 0 and lanes_per_direction >= 1")
        if not self.class_weights or any(w < 0 for _, w in self.class_weights):
            raise ValueError("class_weights must be non-empty and >= 0")

    @property
    def num_frames(self) -> int:
        return self.history_frames + 1 + self.horizon_frames

    @classmethod
    def from_dict(cls, data: dict) -> SynthSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SynthSpec fields: {sorted(unknown)}")
        data = dict(data)
        for key in ("agents_per_scene", "speed_range", "turn_rate_range", "ego_speed_range"):
            if key in data:
                data[key] = tuple(data[key])
        if "class_weights" in data:
            cw = data["class_weights"]
            data["class_weights"] = tuple(cw.items()) if isinstance(cw, dict) else tuple(map(tuple, cw))
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_weights"] = dict(self.class_weights)
        return d


def _lane_offsets(spec: SynthSpec) -> list[tuple[float, int]]:
    """Lateral lane-center offsets and travel direction (+1/-1); the center lane carries the ego."""
    n = spec.lanes_per_direction
    lanes = [(0.0, 1)]
    lanes += [(i * LANE_WIDTH_M, 1) for i in range(1, n)]
    lanes += [(-(i + 1) * LANE_WIDTH_M, -1) for i in range(n)]
    return lanes


def _road_geometry(spec: SynthSpec, frame_pts) -> list[Polygon | Polyline]:
    """Map elements for one road whose lateral offsets are given in its own frame.

    ``frame_pts(s, offset)`` converts along-road distance and lateral offset
    into global (x, y) arrays.
    """
    lanes = _lane_offsets(spec)
    half_w = LANE_WIDTH_M / 2
    left = max(o for o, _ in lanes) + half_w
    right = min(o for o, _ in lanes) - half_w
    s = np.linspace(-spec.extent_m, spec.extent_m, 81)
    edge_l = np.stack(frame_pts(s, left), axis=1)
    edge_r = np.stack(frame_pts(s, right), axis=1)
    geo: list[Polygon | Polyline] = [Polygon(0, tuple(map(tuple, np.concatenate([edge_l, edge_r[::-1]]))))]
    divider = -half_w  # between the two travel directions
    geo.append(Polyline(1, tuple(map(tuple, np.stack(frame_pts(s, divider), axis=1)))))
    for o, _ in lanes:
        for side in (o - half_w, o + half_w):
            if side not in (left, right, divider):
                geo.append(Polyline(2, tuple(map(tuple, np.stack(frame_pts(s, side), axis=1)))))
    for edge in (left + 1.0, right - 1.0):
        strip = np.concatenate([np.stack(frame_pts(s, edge - 1.0), axis=1),
                                np.stack(frame_pts(s[::-1], edge + 1.0), axis=1)])
        geo.append(Polygon(4, tuple(map(tuple, strip))))
    return geo


def _dedupe(geo):
    seen, out = set(), []
    for g in geo:
        key = (type(g), g.channel, g.points)
        if key not in seen:
            seen.add(key)
            out.append(g)
    return out


@dataclass(frozen=True)
class _Road:
    kind: str  # "line" or "arc"
    # line: origin (x, y) and unit direction; arc: center and radius of the ego lane
    x: float
    y: float
    dx: float = 1.0
    dy: float = 0.0
    radius: float = 0.0

    def points(self, s, offset):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "line":
            nx, ny = -self.dy, self.dx
            return self.x + s * self.dx + offset * nx, self.y + s * self.dy + offset * ny
        # Arc around (x, y); ego lane radius ``radius``; positive offset is toward the center.
        r = self.radius - offset
        ang = s / self.radius - math.pi / 2
        return self.x + r * np.cos(ang), self.y + r * np.sin(ang)

    def state(self, s: float, offset: float, direction: int):
        """Position, heading and signed curvature of travel at (s, offset)."""
        if self.kind == "line":
            heading = math.atan2(self.dy, self.dx) + (0.0 if direction > 0 else math.pi)
            x, y = self.points(s, offset)
            return float(x), float(y), heading, 0.0
        r = self.radius - offset
        ang = s / self.radius - math.pi / 2
        x, y = self.x + r * math.cos(ang), self.y + r * math.sin(ang)
        heading = ang + math.pi / 2 if direction > 0 else ang - math.pi / 2
        return x, y, heading, direction / r


def _roads(spec: SynthSpec) -> list[_Road]:
    if spec.layout == "straight":
        return [_Road("line", 0.0, 0.0)]
    if spec.layout == "crossing":
        return [_Road("line", 0.0, 0.0), _Road("line", 0.0, 0.0, 0.0, 1.0)]
    return [_Road("arc", 0.0, spec.curve_radius_m, radius=spec.curve_radius_m)]


def _kinematic_track(x0, y0, heading, speed, turn_rate, t):
    """Positions at times ``t`` (seconds relative to t=0) for constant speed and turn rate."""
    if turn_rate == 0.0:
        vx, vy = speed * math.cos(heading), speed * math.sin(heading)
        return np.stack([x0 + vx * t, y0 + vy * t], axis=1)
    r = speed / turn_rate
    th = heading + turn_rate * t
    return np.stack([x0 + r * (np.sin(th) - math.sin(heading)), y0 - r * (np.cos(th) - math.cos(heading))], axis=1)


def _constant_velocity(p_ref: np.ndarray, v: np.ndarray, frames: np.ndarray, ref: int, rate: float) -> np.ndarray:
    # Anchored at frame 0 so that position(f) == p0 + v * f / rate exactly.
    p0 = p_ref - v * (ref / rate)
    return p0[None, :] + v[None, :] * (frames / rate)[:, None]


def generate_scene(spec: SynthSpec, index: int) -> Scene:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, index])))
    rate = spec.frame_rate_hz
    ref = spec.history_frames
    frames = np.arange(spec.num_frames)
    t = (frames - ref) / rate
    roads = _roads(spec)
    lanes = _lane_offsets(spec)

    ego_speed = float(rng.uniform(*spec.ego_speed_range))
    ex, ey, eh, ek = roads[0].state(0.0, 0.0, 1)
    if ek == 0.0:
        ego_xy = _constant_velocity(np.array([ex, ey]), ego_speed * np.array([math.cos(eh), math.sin(eh)]),
                                    frames, ref, rate)
        ego_heading = np.full(len(frames), eh)
    else:
        ego_xy = _kinematic_track(ex, ey, eh, ego_speed, ego_speed * ek, t)
        ego_heading = eh + ego_speed * ek * t
    ego_poses = np.column_stack([ego_xy, ego_heading])

    classes = [c for c, _ in spec.class_weights]
    weights = np.array([w for _, w in spec.class_weights], dtype=np.float64)
    weights = weights / weights.sum()
    n_agents = int(rng.integers(spec.agents_per_scene[0], spec.agents_per_scene[1] + 1))
    half = spec.extent_m / 2
    placed = [np.array([ex, ey])]
    tracks = []
    for gt_id in range(n_agents):
        for _attempt in range(100):
            road = roads[int(rng.integers(len(roads)))]
            offset, direction = lanes[int(rng.integers(len(lanes)))]
            s = float(rng.uniform(-half, half))
            x0, y0, heading, curvature = road.state(s, offset, direction)
            if all(math.hypot(x0 - p[0], y0 - p[1]) >= spec.min_gap_m for p in placed):
                break
        else:
            continue
        speed = float(rng.uniform(*spec.speed_range))
        turn = float(rng.uniform(*spec.turn_rate_range))
        cls = classes[int(rng.choice(len(classes), p=weights))]
        if curvature != 0.0:
            xy = _kinematic_track(x0, y0, heading, speed, speed * curvature, t)
        elif turn != 0.0:
            xy = _kinematic_track(x0, y0, heading, speed, turn, t)
        else:
            v = speed * np.array([math.cos(heading), math.sin(heading)])
            xy = _constant_velocity(np.array([x0, y0]), v, frames, ref, rate)
        placed.append(np.array([x0, y0]))
        tracks.append(GtTrack(gt_id, cls, 0, xy))

    scene = Scene(
        scene_id=f"synth-{spec.seed}-{index:05d}",
        frame_rate_hz=rate,
        num_frames=spec.num_frames,
        reference_frame=ref,
        ego_poses=ego_poses,
        gt_tracks=tuple(tracks),
    )
    return scene


def scene_map(spec: SynthSpec, scene: Scene) -> RasterMap:
    """Rasterize the lane geometry of ``spec.layout`` around the ego position at t=0."""
    roads = _roads(spec)
    geo = []
    for road in roads:
        geo += _road_geometry(spec, road.points)
    if spec.layout == "crossing":
        geo.append(Polygon(3, ((-12.0, -9.0), (-9.0, -9.0), (-9.0, 9.0), (-12.0, 9.0))))
        geo.append(Polygon(3, ((9.0, -9.0), (12.0, -9.0), (12.0, 9.0), (9.0, 9.0))))
    else:
        cx, cy = roads[0].points(20.0, 0.0)
        geo.append(Polygon(3, ((cx - 1.5, cy - 9.0), (cx + 1.5, cy - 9.0), (cx + 1.5, cy + 9.0), (cx - 1.5, cy + 9.0))))
    grid = GridSpec.centered(scene.ego_xy, spec.extent_m, spec.resolution_m_per_px)
    return rasterize(_dedupe(geo), grid)


def generate_scenes(spec: SynthSpec) -> list[Scene]:
    return [generate_scene(spec, i) for i in range(spec.num_scenes)]


def generate(spec: SynthSpec) -> list[tuple[Scene, RasterMap]]:
    """Scenes with their ground-truth maps, deterministic per ``spec.seed``."""
    return [(s, scene_map(spec, s)) for s in generate_scenes(spec)]


def cv_forecast(track: PredTrack, k: int = 5, horizon_frames: int = 12) -> ForecastSet:
    """Constant-velocity baseline with a fan of headings.

    Velocity comes from the last two waypoints. Mode 1 goes straight; mode
    ``i`` (i >= 2) turns the velocity by ``+/- 5 deg * ceil((i - 1) / 2)``,
    positive first. A single-waypoint track yields stationary modes.
    """
    if k < 1 or horizon_frames < 1:
        raise ValueError("k and horizon_frames must be >= 1")
    last = track.xy[-1]
    if len(track.xy) >= 2:
        v = track.xy[-1] - track.xy[-2]
    else:
        v = np.zeros(2)
    steps = np.arange(1, horizon_frames + 1, dtype=np.float64)[:, None]
    modes = []
    for i in range(k):
        mag = FAN_STEP_DEG * ((i + 1) // 2)
        angle = math.radians(mag if i % 2 == 1 else -mag)
        c, s = math.cos(angle), math.sin(angle)
        vr = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]]) if i else v
        modes.append(last[None, :] + steps * vr[None, :])
    return ForecastSet(track.track_id, np.stack(modes), np.full(k, 1.0 / k))


def fan_angles_deg(k: int) -> list[float]:
    """Heading offsets used by :func:`cv_forecast`, in mode order."""
    return [0.0 if i == 0 else FAN_STEP_DEG * ((i + 1) // 2) * (1 if i % 2 == 1 else -1) for i in range(k)]
