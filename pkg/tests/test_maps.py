import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecast_gauntlet.maps import (
    GridSpec, Polygon, Polyline, RasterFormatError, RasterMap, ablate_channel, accumulate, empty_map, from_bytes,
    iou, polygon_mask, rasterize, read_raster, to_bytes, write_raster,
)


def square(channel, x0, y0, side):
    return Polygon(channel, ((x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)))


def rect(channel, x0, y0, x1, y1):
    return Polygon(channel, ((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


GRID = GridSpec()


class TestRasterize:
    def test_empty(self):
        r = rasterize([], GRID)
        assert r.data.shape == (5, 200, 200) and not r.data.any()

    def test_square_400_pixels(self):
        r = rasterize([square(0, 0.0, 0.0, 10.0)], GRID)
        assert np.count_nonzero(r.data[0]) == 400
        rows, cols = np.nonzero(r.data[0])
        assert np.ptp(rows) == 19 and np.ptp(cols) == 19

    def test_offset_square_still_400(self):
        for x0, y0 in [(-13.1, 7.37), (3.3, -20.0), (-49.9, -49.9)]:
            r = rasterize([square(2, x0, y0, 10.0)], GRID)
            assert np.count_nonzero(r.data[2]) == 400

    def test_point_in_polygon_oracle(self):
        rng = np.random.default_rng(0)
        grid = GridSpec(60, 50, 1, 0.5, (-15.0, -12.0))
        xs, ys = np.meshgrid(grid.col_centers(), grid.row_centers())
        for _ in range(100):
            tri = rng.uniform(-16, 16, (3, 2))
            mask = polygon_mask(tri, grid)
            (ax, ay), (bx, by), (cx, cy) = tri
            d1 = (xs - bx) * (ay - by) - (ax - bx) * (ys - by)
            d2 = (xs - cx) * (by - cy) - (bx - cx) * (ys - cy)
            d3 = (xs - ax) * (cy - ay) - (cx - ax) * (ys - ay)
            strict_in = ((d1 > 1e-9) & (d2 > 1e-9) & (d3 > 1e-9)) | ((d1 < -1e-9) & (d2 < -1e-9) & (d3 < -1e-9))
            near_edge = (np.abs(d1) <= 1e-9) | (np.abs(d2) <= 1e-9) | (np.abs(d3) <= 1e-9)
            assert np.array_equal(mask[~near_edge], strict_in[~near_edge])

    def test_polyline(self):
        r = rasterize([Polyline(1, ((-10.0, 0.25), (10.0, 0.25)), width_px=1.0)], GRID)
        # 40 centers along the segment plus one round-cap center at each end.
        assert np.count_nonzero(r.data[1]) == 42

    def test_bad_channel(self):
        with pytest.raises(IndexError):
            rasterize([square(7, 0, 0, 1)], GRID)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            polygon_mask([(0, 0), (1, 1)], GRID)


def masks(*polys, grid=GRID):
    return rasterize(polys, grid)


class TestIou:
    def test_identical(self):
        m = masks(square(0, 0, 0, 10))
        assert iou(m, m, 0) == 1.0

    def test_disjoint(self):
        assert iou(masks(square(0, 0, 0, 10)), masks(square(0, 20, 20, 10)), 0) == 0.0

    def test_nested_third(self):
        inner = masks(rect(0, 0, 0, 10, 10))
        outer = masks(rect(0, 0, 0, 30, 10))
        assert iou(inner, outer, 0) == 1 / 3
        assert iou(outer, inner, 0) == 1 / 3

    def test_both_empty_undefined(self):
        e = empty_map(masks())
        assert iou(e, e, 3) is None

    def test_binarization_threshold(self):
        data = np.zeros((1, 2, 2), np.uint8)
        data[0, 0, 0] = 127
        data[0, 1, 1] = 128
        a = RasterMap(GridSpec(2, 2, 1), data)
        b = RasterMap(GridSpec(2, 2, 1), np.where(data > 0, 255, 0).astype(np.uint8))
        assert iou(a, b, 0) == 0.5

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        g = GridSpec(16, 12, 1)
        a = RasterMap(g, rng.integers(0, 256, (1, 12, 16), dtype=np.uint8))
        b = RasterMap(g, rng.integers(0, 256, (1, 12, 16), dtype=np.uint8))
        assert iou(a, b, 0) == iou(b, a, 0)
        if (a.data >= 128).any():
            assert iou(a, a, 0) == 1.0


class TestAblation:
    def full(self):
        return masks(*[square(c, 3 * c, 0, 2) for c in range(5)])

    def test_idempotent(self):
        once = ablate_channel(self.full(), 2)
        assert ablate_channel(once, 2) == once
        assert to_bytes(ablate_channel(once, 2)) == to_bytes(once)

    def test_all_channels_is_empty(self):
        r = self.full()
        for c in range(5):
            r = ablate_channel(r, c)
        assert r == empty_map(self.full())

    def test_other_channels_untouched(self):
        src = self.full()
        out = ablate_channel(src, 1)
        assert not out.data[1].any()
        for c in (0, 2, 3, 4):
            assert out.data[c].tobytes() == src.data[c].tobytes()
            assert iou(out, src, c) == 1.0

    def test_input_not_mutated(self):
        src = self.full()
        before = to_bytes(src)
        ablate_channel(src, 0)
        assert to_bytes(src) == before

    def test_empty_map(self):
        src = self.full()
        e = empty_map(src)
        assert int(e.data.sum()) == 0 and e.grid.same_geometry(src.grid)


class TestAccumulate:
    def test_identity_pose(self):
        src = masks(square(0, 0, 0, 10), square(3, -20, 5, 4))
        out = accumulate([src], [(0.0, 0.0, 0.0)])
        assert out.grid.same_geometry(src.grid) and np.array_equal(out.data, src.data)

    def test_union_and_max(self):
        g = GridSpec(20, 20, 1, 0.5, (0.25, 0.25))
        a = np.zeros((1, 20, 20), np.uint8)
        b = np.zeros((1, 20, 20), np.uint8)
        a[0, :5, :5] = 200
        b[0, 3:8, 3:8] = 100
        b[0, 15:, 15:] = 255
        out = accumulate([RasterMap(g, a), RasterMap(g, b)], [(0, 0, 0), (0, 0, 0)])
        oracle = np.zeros_like(a)
        for r in range(20):
            for c in range(20):
                oracle[0, r, c] = max(a[0, r, c], b[0, r, c])
        assert np.array_equal(out.data, oracle)

    def test_translated_maps_cover_union(self):
        g = GridSpec(20, 20, 1, 0.5, (-4.75, -4.75))
        full = RasterMap(g, np.full((1, 20, 20), 255, np.uint8))
        out = accumulate([full, full], [(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)])
        assert out.width == 40 and out.height == 20 and np.count_nonzero(out.data) == 800

    def test_order_insensitive(self):
        rng = np.random.default_rng(1)
        g = GridSpec(30, 30, 2, 0.5, (-7.25, -7.25))
        maps = [RasterMap(g, rng.integers(0, 256, (2, 30, 30), dtype=np.uint8)) for _ in range(3)]
        poses = [(0.0, 0.0, 0.0), (3.0, -2.0, 0.4), (-5.0, 1.0, -1.2)]
        a = accumulate(maps, poses)
        b = accumulate(maps[::-1], poses[::-1])
        assert to_bytes(a) == to_bytes(b)

    def test_quarter_turn(self):
        g = GridSpec(4, 4, 1, 1.0, (0.0, 0.0))
        data = np.zeros((1, 4, 4), np.uint8)
        data[0, 0, 3] = 255  # ego-frame point (3, 0)
        out = accumulate([RasterMap(g, data)], [(0.0, 0.0, np.pi / 2)])
        rows, cols = np.nonzero(out.data[0])
        x = out.origin[0] + cols[0] * out.resolution_m_per_px
        y = out.origin[1] + rows[0] * out.resolution_m_per_px
        assert (round(x, 6), round(y, 6)) == (0.0, 3.0)


class TestFormat:
    def test_round_trip_byte_identical(self):
        src = masks(square(0, 0, 0, 10), Polyline(2, ((-30, -30), (30, 10)), 3.0))
        blob = to_bytes(src)
        assert len(blob) == 29 + 5 * 200 * 200
        back = from_bytes(blob)
        assert back == src and to_bytes(back) == blob
        buf = io.BytesIO()
        write_raster(back, buf)
        assert read_raster(io.BytesIO(buf.getvalue())) == src

    def test_odd_geometry_round_trip(self):
        g = GridSpec(7, 3, 2, 0.3, (1.1, -2.2))
        src = RasterMap(g, np.arange(42, dtype=np.uint8).reshape(2, 3, 7))
        assert to_bytes(from_bytes(to_bytes(src))) == to_bytes(src)

    def test_header_layout(self):
        blob = to_bytes(empty_map(masks()))
        magic, version, w, h, c, res, ox, oy = struct.unpack_from("<4sBIIIfff", blob)
        assert (magic, version, w, h, c, res, ox, oy) == (b"FMAP", 1, 200, 200, 5, 0.5, -49.75, -49.75)

    @pytest.mark.parametrize("mutate,offset", [
        (lambda b: b"XMAP" + b[4:], 0),
        (lambda b: b[:4] + b"\x02" + b[5:], 4),
        (lambda b: b[:13] + struct.pack("<I", 0) + b[17:], 13),
        (lambda b: b[:17] + struct.pack("<f", -1.0) + b[21:], 17),
        (lambda b: b[:21] + struct.pack("<f", float("nan")) + b[25:], 21),
        (lambda b: b[:20], 20),
        (lambda b: b[:-1], 29 + 2 * 3 * 4 - 1),
        (lambda b: b + b"\x00", 29 + 2 * 3 * 4),
    ])
    def test_errors_carry_offset(self, mutate, offset):
        blob = to_bytes(RasterMap(GridSpec(4, 3, 2), np.zeros((2, 3, 4), np.uint8)))
        with pytest.raises(RasterFormatError) as err:
            from_bytes(mutate(blob))
        assert err.value.offset == offset and str(err.value).startswith(f"byte {offset}:")

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            RasterMap(GridSpec(4, 3, 2), np.zeros((2, 4, 3), np.uint8))
