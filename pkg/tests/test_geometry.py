"""Spline fitting, anchor sampling, grid encode/decode, affine transforms."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import CubicSpline

from lanekit.dataset import LaneRecord
from lanekit import geometry as G
from lanekit.geometry import RowAnchorGrid


@pytest.fixture
def tusimple_grid():
    return RowAnchorGrid(image_width=1280, image_height=720,
                         h_samples=tuple(range(160, 712, 10)), w=100)


class TestGridType:
    def test_background_index_is_w(self, tusimple_grid):
        assert tusimple_grid.background_index == 100
        assert tusimple_grid.cell_width == 12.8

    def test_invalid_grids(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            RowAnchorGrid(100, 100, (10, 10, 20), 10)
        with pytest.raises(ValueError, match="within"):
            RowAnchorGrid(100, 100, (10, 120), 10)
        with pytest.raises(ValueError, match="cells"):
            RowAnchorGrid(100, 100, (10, 20), 1)


class TestFitSpline:
    def test_two_point_spline_is_linear(self):
        curve = G.fit_spline([(100, 200), (200, 400)])
        assert abs(curve(300.0) - 150.0) < 1e-12
        assert abs(curve(200.0) - 100.0) < 1e-12

    def test_knot_interpolation_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(2, 9))
            ys = np.sort(rng.choice(np.arange(100, 700), size=n, replace=False)).astype(float)
            xs = rng.uniform(0, 1280, size=n)
            curve = G.fit_spline(np.stack([xs, ys], axis=1))
            np.testing.assert_allclose(curve(ys), xs, atol=1e-9)

    def test_parabola_fixture_dense_oracle(self):
        # knots from x = 0.001 * y^2 at y in {100, 150, ..., 400}
        ys = np.arange(100, 401, 50, dtype=float)
        xs = 0.001 * ys**2
        curve = G.fit_spline(np.stack([xs, ys], axis=1))
        assert abs(curve(125.0) - 15.625) < 0.5
        dense = np.linspace(100, 400, 1201)
        assert np.max(np.abs(curve(dense) - 0.001 * dense**2)) < 0.5

    def test_matches_reference_natural_spline(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(3, 10))
            ys = np.sort(rng.choice(np.arange(0, 720), size=n, replace=False)).astype(float)
            xs = rng.uniform(0, 1280, size=n)
            ours = G.fit_spline(np.stack([xs, ys], axis=1))
            ref = CubicSpline(ys, xs, bc_type="natural")
            probe = np.linspace(ys[0], ys[-1], 200)
            np.testing.assert_allclose(ours(probe), ref(probe), atol=1e-8)

    def test_natural_boundary_second_derivative(self):
        rng = np.random.default_rng(9)
        ys = np.sort(rng.choice(np.arange(0, 700), size=7, replace=False)).astype(float)
        xs = rng.uniform(0, 1280, size=7)
        curve = G.fit_spline(np.stack([xs, ys], axis=1))
        for y0 in (ys[0], ys[-1]):
            d = 1e-3
            sgn = 1.0 if y0 == ys[0] else -1.0
            second = (curve(y0 + 2 * sgn * d) - 2 * curve(y0 + sgn * d) + curve(y0)) / d**2
            assert abs(second) < 1e-4

    def test_duplicate_y_points_averaged(self):
        curve = G.fit_spline([(10, 100), (30, 100), (50, 200)])
        assert abs(curve(100.0) - 20.0) < 1e-12

    def test_single_distinct_y_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            G.fit_spline([(10, 100), (20, 100)])


class TestSampleAtAnchors:
    def test_outside_domain_is_absent(self, tusimple_grid):
        curve = G.fit_spline([(600, 200), (700, 710)])
        xs = G.sample_at_anchors(curve, tusimple_grid)
        assert xs[0] == -2.0  # anchor y=160 above the lane start
        assert xs[5] != -2.0

    def test_vertical_line(self, tusimple_grid):
        curve = G.fit_spline([(640, 160), (640, 710)])
        xs = G.sample_at_anchors(curve, tusimple_grid)
        assert all(x == 640.0 for x in xs)

    def test_straight_lane_spanning_subrange(self, tusimple_grid):
        curve = G.fit_spline([(100, 160), (900, 710)])
        xs = G.sample_at_anchors(curve, tusimple_grid)
        assert xs[0] != -2.0
        grid2 = RowAnchorGrid(1280, 720, (120,) + tuple(range(160, 712, 10)), 100)
        xs2 = G.sample_at_anchors(curve, grid2)
        assert xs2[0] == -2.0

    def test_parabola_anchor_oracle(self):
        ys = np.arange(100, 401, 50, dtype=float)
        xs = 0.001 * ys**2
        curve = G.fit_spline(np.stack([xs, ys], axis=1))
        grid = RowAnchorGrid(1280, 720, tuple(range(100, 401, 10)), 100)
        got = G.sample_at_anchors(curve, grid)
        want = 0.001 * np.asarray(grid.h_samples, dtype=float) ** 2
        np.testing.assert_allclose(got, want, atol=0.5)


class TestEncode:
    def test_cell_zero(self, tusimple_grid):
        t = G.encode([[0.0] * tusimple_grid.h], tusimple_grid)
        assert t[0, 0] == 0

    def test_cell_fifty(self, tusimple_grid):
        t = G.encode([[640.0] * tusimple_grid.h], tusimple_grid)
        assert np.all(t == 50)

    def test_absent_maps_to_background(self, tusimple_grid):
        t = G.encode([[-2.0] * tusimple_grid.h], tusimple_grid)
        assert np.all(t == 100)

    def test_right_edge_clamps_to_last_cell(self, tusimple_grid):
        t = G.encode([[1280.0] * tusimple_grid.h], tusimple_grid)
        assert np.all(t == 99)

    def test_other_negative_rejected(self, tusimple_grid):
        with pytest.raises(ValueError, match="negative"):
            G.encode([[-5.0] * tusimple_grid.h], tusimple_grid)

    def test_padding_to_max_lanes(self, tusimple_grid):
        t = G.encode([[640.0] * tusimple_grid.h], tusimple_grid, max_lanes=4)
        assert t.shape == (4, tusimple_grid.h)
        assert np.all(t[1:] == tusimple_grid.background_index)


class TestDecode:
    def test_one_hot_cell_center(self, tusimple_grid):
        h = tusimple_grid.h
        logits = np.zeros((1, h, 101))
        logits[0, :, 50] = 25.0
        xs = G.decode(logits, tusimple_grid)
        np.testing.assert_allclose(xs[0], 646.4, atol=1e-4)

    def test_background_argmax_is_absent(self, tusimple_grid):
        h = tusimple_grid.h
        logits = np.zeros((1, h, 101))
        logits[0, :, 100] = 10.0
        xs = G.decode(logits, tusimple_grid)
        assert all(x == -2.0 for x in xs[0])

    def test_shape_mismatch(self, tusimple_grid):
        with pytest.raises(ValueError, match="shape"):
            G.decode(np.zeros((1, 3, 101)), tusimple_grid)

    def test_round_trip_within_cell_width(self, tusimple_grid):
        rng = np.random.default_rng(42)
        h = tusimple_grid.h
        xs = rng.uniform(0, 1280, size=1000)
        for start in range(0, 1000, h):
            chunk = xs[start : start + h]
            if len(chunk) < h:
                chunk = np.concatenate([chunk, np.full(h - len(chunk), 1.0)])
            cells = G.encode([chunk.tolist()], tusimple_grid)
            logits = np.zeros((1, h, 101))
            logits[0, np.arange(h), cells[0]] = 30.0
            decoded = np.asarray(G.decode(logits, tusimple_grid)[0])
            assert np.max(np.abs(decoded - chunk)) <= tusimple_grid.cell_width + 1e-9

    def test_decode_stays_in_bounds(self, tusimple_grid):
        rng = np.random.default_rng(3)
        logits = rng.normal(0, 5, size=(4, tusimple_grid.h, 101))
        for lane in G.decode(logits, tusimple_grid):
            for x in lane:
                assert x == -2.0 or 0.0 <= x <= 1279.0


class TestTransformRecord:
    def _straight_record(self, grid):
        xs = G.sample_at_anchors(G.fit_spline([(400, 160), (900, 710)]), grid)
        return LaneRecord(raw_file="a.ppm", h_samples=list(grid.h_samples),
                          lanes=[xs], classes=[1])

    def test_identity(self, tusimple_grid):
        rec = self._straight_record(tusimple_grid)
        out = G.transform_record(np.array([[1.0, 0, 0], [0, 1.0, 0]]), rec, tusimple_grid)
        np.testing.assert_allclose(out.lanes[0], rec.lanes[0], atol=1e-9)
        assert out.classes == rec.classes

    def test_horizontal_flip_vertical_line(self, tusimple_grid):
        xs = [200.0] * tusimple_grid.h
        rec = LaneRecord("a.ppm", list(tusimple_grid.h_samples), [xs], [2])
        out = G.transform_record(G.flip_affine(1280), rec, tusimple_grid)
        np.testing.assert_allclose(out.lanes[0], 1079.0, atol=1e-9)

    def test_flip_reverses_lane_order_and_classes(self, tusimple_grid):
        left = [200.0] * tusimple_grid.h
        right = [1000.0] * tusimple_grid.h
        rec = LaneRecord("a.ppm", list(tusimple_grid.h_samples), [left, right], [0, 2])
        out = G.transform_record(G.flip_affine(1280), rec, tusimple_grid)
        assert out.classes == [2, 0]
        assert out.lanes[0][0] < out.lanes[1][0]  # still left to right

    def test_rotation_against_dense_oracle(self, tusimple_grid):
        rec = self._straight_record(tusimple_grid)
        affine = G.rotation_affine(5.0, (639.5, 359.5))
        out = G.transform_record(affine, rec, tusimple_grid)

        # oracle: rotate densely sampled points of the original lane, then
        # interpolate x at the anchors
        curve = G.fit_spline([(400, 160), (900, 710)])
        ys = np.linspace(160, 710, 2000)
        pts = np.stack([curve(ys), ys], axis=1)
        mapped = pts @ affine[:, :2].T + affine[:, 2]
        order = np.argsort(mapped[:, 1])
        my, mx = mapped[order, 1], mapped[order, 0]
        for anchor, got in zip(tusimple_grid.h_samples, out.lanes[0]):
            if got == -2.0:
                continue
            want = np.interp(anchor, my, mx)
            assert abs(got - want) < 0.5

    def test_points_leaving_image_become_absent(self, tusimple_grid):
        rec = self._straight_record(tusimple_grid)
        out = G.transform_record(G.translation_affine(1000.0, 0.0), rec, tusimple_grid)
        xs = np.asarray(out.lanes[0])
        assert np.any(xs == -2.0)
        assert all(x == -2.0 or 0 <= x < 1280 for x in xs)

    def test_lane_with_too_few_points_goes_background(self, tusimple_grid):
        h = tusimple_grid.h
        xs = [-2.0] * h
        xs[10] = 500.0
        rec = LaneRecord("a.ppm", list(tusimple_grid.h_samples), [xs], [1])
        out = G.transform_record(np.array([[1.0, 0, 0], [0, 1.0, 0]]), rec, tusimple_grid)
        assert all(x == -2.0 for x in out.lanes[0])

    def test_non_invertible_rejected(self, tusimple_grid):
        rec = self._straight_record(tusimple_grid)
        with pytest.raises(ValueError, match="invertible"):
            G.transform_record(np.zeros((2, 3)), rec, tusimple_grid)


class TestProperties:
    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_grid_target_entries_in_range(self, seed):
        rng = np.random.default_rng(seed)
        grid = RowAnchorGrid(1280, 720, tuple(range(160, 712, 20)), 100)
        xs = rng.uniform(0, 1280, size=grid.h)
        xs[rng.random(grid.h) < 0.3] = -2.0
        t = G.encode([xs.tolist()], grid)
        assert t.min() >= 0 and t.max() <= grid.w
