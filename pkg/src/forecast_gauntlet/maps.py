"""Rasterized bird's-eye-view maps.

Pixel ``(row, col)`` of a raster has its center at
``(origin_x + col * resolution, origin_y + row * resolution)`` in meters;
rows grow along +y. Channels hold 8-bit occupancy, 0 or 255 once rasterized.

Binary layout (``.fmap``), little endian::

    b"FMAP" | u8 version=1 | u32 width | u32 height | u32 channels
    | f32 resolution | f32 origin_x | f32 origin_y
    | channels * height * width bytes (channel-major, then row-major)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

CHANNEL_NAMES = ("road_polygon", "road_divider", "lane_divider", "ped_crossing", "walkway")
IOU_THRESHOLD = 128

MAGIC = b"FMAP"
VERSION = 1
_HEADER = struct.Struct("<4sBIIIfff")


class RasterFormatError(ValueError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"byte {offset}: {message}")
        self.message = message
        self.offset = offset


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True, eq=False)
class GridSpec:
    width: int = 200
    height: int = 200
    channels: int = 5
    resolution_m_per_px: float = 0.5
    origin: tuple[float, float] = (-49.75, -49.75)

    def __post_init__(self) -> None:
        if self.width < 0 or self.height < 0 or self.channels < 1:
            raise ValueError("width/height must be >= 0 and channels >= 1")
        if not self.resolution_m_per_px > 0:
            raise ValueError("resolution must be > 0")
        # The file stores f32 geometry; keep memory and disk identical.
        object.__setattr__(self, "resolution_m_per_px", _f32(self.resolution_m_per_px))
        object.__setattr__(self, "origin", (_f32(self.origin[0]), _f32(self.origin[1])))

    @classmethod
    def centered(cls, center_xy: Sequence[float], extent_m: float = 100.0, resolution: float = 0.5,
                 channels: int = 5) -> GridSpec:
        """Square grid of ``extent_m`` meters centered on ``center_xy``."""
        n = int(round(extent_m / resolution))
        half = (n - 1) * resolution / 2.0
        return cls(n, n, channels, resolution, (center_xy[0] - half, center_xy[1] - half))

    def col_centers(self) -> np.ndarray:
        return self.origin[0] + np.arange(self.width) * self.resolution_m_per_px

    def row_centers(self) -> np.ndarray:
        return self.origin[1] + np.arange(self.height) * self.resolution_m_per_px

    def same_geometry(self, other: GridSpec) -> bool:
        return (self.width, self.height, self.channels, self.resolution_m_per_px, self.origin) == (
            other.width, other.height, other.channels, other.resolution_m_per_px, other.origin)


@dataclass(frozen=True, eq=False)
class RasterMap:
    grid: GridSpec
    data: np.ndarray  # (channels, height, width) uint8

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.uint8)
        g = self.grid
        if data.shape != (g.channels, g.height, g.width):
            raise ValueError(f"data shape {data.shape} does not match grid {(g.channels, g.height, g.width)}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.grid.width

    @property
    def height(self) -> int:
        return self.grid.height

    @property
    def channels(self) -> int:
        return self.grid.channels

    @property
    def resolution_m_per_px(self) -> float:
        return self.grid.resolution_m_per_px

    @property
    def origin(self) -> tuple[float, float]:
        return self.grid.origin

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterMap):
            return NotImplemented
        return self.grid.same_geometry(other.grid) and np.array_equal(self.data, other.data)


# ------------------------------------------------------------------ geometry

@dataclass(frozen=True)
class Polygon:
    channel: int
    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class Polyline:
    channel: int
    points: tuple[tuple[float, float], ...]
    width_px: float = 1.0


def polygon_mask(points: Sequence[Sequence[float]], grid: GridSpec) -> np.ndarray:
    """Scanline fill: a pixel is set when its center is inside the polygon.

    Per row, edges with ``min(y0, y1) <= y < max(y0, y1)`` are crossed and the
    spans ``[x_2k, x_2k+1)`` between sorted crossings are filled (even-odd rule).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError(f"degenerate polygon: need >= 3 vertices, got {len(pts)}")
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    if grid.width == 0 or grid.height == 0:
        return mask
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cx = grid.col_centers()
    ys = grid.row_centers()
    rows = np.nonzero((ys >= y0.min()) & (ys < y0.max()))[0]
    for r in rows:
        y = ys[r]
        crossing = (y0 <= y) != (y1 <= y)
        if not crossing.any():
            continue
        xa, ya, xb, yb = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
        xs = np.sort(xa + (y - ya) * (xb - xa) / (yb - ya))
        for left, right in zip(xs[0::2], xs[1::2]):
            mask[r] |= (cx >= left) & (cx < right)
    return mask


def polyline_mask(points: Sequence[Sequence[float]], grid: GridSpec, width_px: float = 1.0) -> np.ndarray:
    """Pixels whose center lies within ``width_px / 2`` pixels of the polyline."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError(f"degenerate polyline: need >= 2 vertices, got {len(pts)}")
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    if grid.width == 0 or grid.height == 0:
        return mask
    half = width_px * grid.resolution_m_per_px / 2.0
    cx, cy = grid.col_centers(), grid.row_centers()
    res = grid.resolution_m_per_px
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        # Restrict to the segment's padded bounding box.
        c_lo = max(0, int(math.floor((min(ax, bx) - half - grid.origin[0]) / res)))
        c_hi = min(grid.width, int(math.ceil((max(ax, bx) + half - grid.origin[0]) / res)) + 1)
        r_lo = max(0, int(math.floor((min(ay, by) - half - grid.origin[1]) / res)))
        r_hi = min(grid.height, int(math.ceil((max(ay, by) + half - grid.origin[1]) / res)) + 1)
        if c_lo >= c_hi or r_lo >= r_hi:
            continue
        px = cx[None, c_lo:c_hi]
        py = cy[r_lo:r_hi, None]
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            t = np.zeros_like(px + py)
        else:
            t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg2, 0.0, 1.0)
        dist = np.hypot(px - (ax + t * dx), py - (ay + t * dy))
        mask[r_lo:r_hi, c_lo:c_hi] |= dist <= half
    return mask


def rasterize(geometry: Iterable[Polygon | Polyline], grid: GridSpec) -> RasterMap:
    data = np.zeros((grid.channels, grid.height, grid.width), dtype=np.uint8)
    for g in geometry:
        if not 0 <= g.channel < grid.channels:
            raise IndexError(f"channel {g.channel} out of range for {grid.channels} channels")
        if isinstance(g, Polygon):
            m = polygon_mask(g.points, grid)
        elif isinstance(g, Polyline):
            m = polyline_mask(g.points, grid, g.width_px)
        else:
            raise TypeError(f"unsupported geometry {type(g).__name__}")
        data[g.channel][m] = 255
    return RasterMap(grid, data)


# ------------------------------------------------------------------ operators

def ablate_channel(raster: RasterMap, class_index: int) -> RasterMap:
    if not 0 <= class_index < raster.channels:
        raise IndexError(f"channel {class_index} out of range for {raster.channels} channels")
    data = raster.data.copy()
    data[class_index] = 0
    return RasterMap(raster.grid, data)


def empty_map(like: RasterMap) -> RasterMap:
    return RasterMap(like.grid, np.zeros_like(like.data))


def iou(pred: RasterMap, gt: RasterMap, channel: int) -> float | None:
    """IoU of the binarized (>= 128) masks; ``None`` when both are empty."""
    if not pred.grid.same_geometry(gt.grid):
        raise ValueError("raster geometry mismatch")
    if not 0 <= channel < pred.channels:
        raise IndexError(f"channel {channel} out of range")
    a = pred.data[channel] >= IOU_THRESHOLD
    b = gt.data[channel] >= IOU_THRESHOLD
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return None
    return np.count_nonzero(a & b) / union


def accumulate(maps: Sequence[RasterMap], poses: Sequence[Sequence[float]]) -> RasterMap:
    """Warp ego-frame rasters into the global frame and merge by per-cell maximum.

    ``poses`` are ``(x, y, heading)`` of the ego for each map. The output grid
    keeps the input resolution and bounds all warped pixel centers.
    Resampling is nearest-neighbor.
    """
    if len(maps) != len(poses):
        raise ValueError("need exactly one pose per map")
    if not maps:
        raise ValueError("nothing to accumulate")
    res = maps[0].resolution_m_per_px
    channels = maps[0].channels
    if any(m.resolution_m_per_px != res or m.channels != channels for m in maps):
        raise ValueError("maps must share resolution and channel count")

    def transform(pose, x, y):
        px, py, th = pose
        c, s = math.cos(th), math.sin(th)
        return px + c * x - s * y, py + s * x + c * y

    corners_x, corners_y = [], []
    for m, pose in zip(maps, poses):
        xs = m.origin[0] + np.array([0, m.width - 1]) * res
        ys = m.origin[1] + np.array([0, m.height - 1]) * res
        for x in xs:
            for y in ys:
                gx, gy = transform(pose, x, y)
                corners_x.append(gx)
                corners_y.append(gy)
    ox, oy = min(corners_x), min(corners_y)
    width = int(math.floor((max(corners_x) - ox) / res + 1e-6)) + 1
    height = int(math.floor((max(corners_y) - oy) / res + 1e-6)) + 1
    grid = GridSpec(width, height, channels, res, (ox, oy))
    gx = grid.col_centers()[None, :]
    gy = grid.row_centers()[:, None]
    out = np.zeros((channels, height, width), dtype=np.uint8)
    for m, (px, py, th) in zip(maps, poses):
        c, s = math.cos(th), math.sin(th)
        dx, dy = gx - px, gy - py
        ex = c * dx + s * dy
        ey = -s * dx + c * dy
        col = np.floor((ex - m.origin[0]) / res + 0.5).astype(np.int64)
        row = np.floor((ey - m.origin[1]) / res + 0.5).astype(np.int64)
        inside = (col >= 0) & (col < m.width) & (row >= 0) & (row < m.height)
        rr, cc = np.nonzero(inside)
        vals = m.data[:, row[rr, cc], col[rr, cc]]
        out[:, rr, cc] = np.maximum(out[:, rr, cc], vals)
    return RasterMap(grid, out)


# ------------------------------------------------------------------ file format

def to_bytes(raster: RasterMap) -> bytes:
    g = raster.grid
    header = _HEADER.pack(MAGIC, VERSION, g.width, g.height, g.channels,
                          g.resolution_m_per_px, g.origin[0], g.origin[1])
    return header + np.ascontiguousarray(raster.data, dtype=np.uint8).tobytes()


def from_bytes(blob: bytes) -> RasterMap:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise RasterFormatError(f"bad magic {bytes(blob[:4])!r}, expected {MAGIC!r}", 0)
    if len(blob) < _HEADER.size:
        raise RasterFormatError(f"truncated header ({len(blob)} of {_HEADER.size} bytes)", len(blob))
    _, version, width, height, channels, res, ox, oy = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise RasterFormatError(f"unsupported version {version}", 4)
    if channels < 1:
        raise RasterFormatError("channel count must be >= 1", 13)
    if not (math.isfinite(res) and res > 0):
        raise RasterFormatError(f"invalid resolution {res}", 17)
    if not (math.isfinite(ox) and math.isfinite(oy)):
        raise RasterFormatError("non-finite origin", 21)
    expected = channels * height * width
    body = len(blob) - _HEADER.size
    if body != expected:
        raise RasterFormatError(f"payload has {body} bytes, expected {expected}", _HEADER.size + min(body, expected))
    data = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size).reshape(channels, height, width)
    return RasterMap(GridSpec(width, height, channels, res, (ox, oy)), data)


def write_raster(raster: RasterMap, fp: BinaryIO) -> None:
    fp.write(to_bytes(raster))


def read_raster(fp: BinaryIO) -> RasterMap:
    return from_bytes(fp.read())
