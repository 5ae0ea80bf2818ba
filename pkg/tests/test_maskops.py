from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hosfuse.maskops import (
    BBox,
    BinaryMask,
    DimensionMismatchError,
    EmptyMaskError,
    MalformedMaskError,
    Point,
    box_center,
    box_iou,
    mask_area,
    mask_contains_point,
    mask_intersection_area,
    mask_iou,
    mask_pixels_in_box,
    mask_subtract,
    mask_tight_box,
    mask_union,
    rle_decode,
    rle_encode,
)

from conftest import grid_rect, rect


def grids(max_side=16):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: arrays(np.bool_, hw)
    )


def grid_pairs(max_side=16):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda hw: st.tuples(arrays(np.bool_, hw), arrays(np.bool_, hw))
    )


class TestCodec:
    def test_decode_first_column(self):
        g = rle_decode(BinaryMask(3, 3, (0, 3, 6)))
        assert g.shape == (3, 3)
        assert g[:, 0].all() and not g[:, 1:].any()

    def test_decode_zero_and_full(self):
        assert not rle_decode(BinaryMask(2, 2, (4,))).any()
        assert rle_decode(BinaryMask(2, 2, (0, 4))).all()

    def test_encode_diagonal(self):
        g = np.array([[True, False], [False, True]])
        assert rle_encode(g).runs == (0, 1, 2, 1)

    def test_encode_zero(self):
        assert rle_encode(np.zeros((2, 2), bool)).runs == (4,)

    def test_scan_order_is_column_major(self):
        # pixel (x=1, y=0) on a 2-wide, 3-high grid sits at scan index 1*3 + 0
        g = np.zeros((3, 2), bool)
        g[0, 1] = True
        assert rle_encode(g).runs == (3, 1, 2)

    @pytest.mark.parametrize(
        "runs", [(3, 3, 2), (0, 3, 0, 6), (-1, 10), (), (9, 1)]
    )
    def test_malformed(self, runs):
        with pytest.raises(MalformedMaskError):
            BinaryMask(3, 3, runs)

    def test_bad_dimensions(self):
        with pytest.raises(MalformedMaskError):
            BinaryMask(0, 3, (0,))

    @given(grids(24))
    def test_roundtrip(self, g):
        m = rle_encode(g)
        assert np.array_equal(rle_decode(m), g)
        assert rle_encode(rle_decode(m)) == m


class TestCounts:
    def test_area(self):
        assert mask_area(BinaryMask(2, 2, (0, 4))) == 4
        assert mask_area(BinaryMask(3, 3, (0, 3, 6))) == 3
        assert mask_area(BinaryMask.zeros(5, 5)) == 0

    def test_intersection_examples(self):
        a = rect(8, 8, 0, 0, 4, 4)
        b = rect(8, 8, 2, 2, 6, 6)
        assert mask_intersection_area(a, a) == 16
        assert mask_intersection_area(a, b) == 4
        col0, col2 = rect(3, 3, 0, 0, 1, 3), rect(3, 3, 2, 0, 3, 3)
        assert mask_intersection_area(col0, col2) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            mask_intersection_area(BinaryMask.zeros(2, 3), BinaryMask.zeros(3, 2))
        with pytest.raises(DimensionMismatchError):
            mask_union(BinaryMask.zeros(2, 3), BinaryMask.zeros(3, 2))

    def test_iou_examples(self):
        a = rect(8, 8, 0, 0, 4, 4)
        b = rect(8, 8, 2, 2, 6, 6)
        assert mask_iou(a, a) == 1
        assert mask_iou(a, rect(8, 8, 5, 5, 8, 8)) == 0
        # 4 shared pixels, 16 + 16 - 4 = 28 in the union
        assert mask_iou(a, b) == Fraction(1, 7)

    def test_iou_of_two_empty_masks_is_zero(self):
        z = BinaryMask.zeros(4, 4)
        assert mask_iou(z, z) == 0

    @given(grid_pairs(16))
    def test_counts_match_dense(self, pair):
        ga, gb = pair
        a, b = rle_encode(ga), rle_encode(gb)
        inter = int((ga & gb).sum())
        assert mask_area(a) == int(ga.sum())
        assert mask_intersection_area(a, b) == inter
        assert mask_area(a) + mask_area(b) == mask_area(mask_union(a, b)) + inter
        assert mask_iou(a, b) == mask_iou(b, a)
        assert 0 <= mask_iou(a, b) <= 1
        if ga.any():
            assert mask_iou(a, a) == 1
        full = BBox(0, 0, ga.shape[1], ga.shape[0])
        assert mask_pixels_in_box(a, full) == mask_area(a)


class TestBoxes:
    def test_box_iou(self):
        assert box_iou(BBox(0, 0, 4, 4), BBox(0, 0, 4, 4)) == 1
        assert box_iou(BBox(0, 0, 4, 4), BBox(2, 0, 6, 4)) == Fraction(1, 3)
        assert box_iou(BBox(0, 0, 2, 2), BBox(5, 5, 7, 7)) == 0

    @pytest.mark.parametrize(
        "box, center",
        [((2, 2, 6, 6), (4, 4)), ((0, 0, 1, 1), (0.5, 0.5)), ((10, 20, 30, 60), (20, 40))],
    )
    def test_center(self, box, center):
        assert box_center(BBox(*box)) == Point(*center)

    def test_invalid_boxes(self):
        with pytest.raises(ValueError):
            BBox(3, 0, 3, 4)
        with pytest.raises(ValueError):
            BBox(-1, 0, 3, 4)
        with pytest.raises(TypeError):
            BBox(0.5, 0, 3, 4)

    def test_outward_rounding(self):
        assert BBox.outward(1.2, 2.9, 3.1, 4.0) == BBox(1, 2, 4, 4)

    def test_pixels_in_box(self):
        box = BBox(2, 2, 6, 6)
        assert mask_pixels_in_box(BinaryMask.full(8, 8), box) == 16
        assert mask_pixels_in_box(rect(8, 8, 0, 0, 4, 4), box) == 4
        assert mask_pixels_in_box(BinaryMask.zeros(8, 8), box) == 0

    def test_pixels_in_box_clips_to_image(self):
        assert mask_pixels_in_box(BinaryMask.full(4, 4), BBox(2, 2, 10, 10)) == 4

    @given(grids(12), st.data())
    def test_pixels_in_box_dense(self, g, data):
        h, w = g.shape
        x1 = data.draw(st.integers(0, w - 1))
        x2 = data.draw(st.integers(x1 + 1, w))
        y1 = data.draw(st.integers(0, h - 1))
        y2 = data.draw(st.integers(y1 + 1, h))
        assert mask_pixels_in_box(rle_encode(g), BBox(x1, y1, x2, y2)) == int(g[y1:y2, x1:x2].sum())


class TestPointsAndTightBox:
    def test_contains(self):
        assert mask_contains_point(BinaryMask.full(2, 2), Point(0.5, 0.5))
        # (4, 4) floors to pixel (4, 4), just outside [0,4)^2
        assert not mask_contains_point(rect(8, 8, 0, 0, 4, 4), Point(4, 4))
        assert mask_contains_point(rect(8, 8, 0, 0, 4, 4), Point(3.99, 3.99))
        assert not mask_contains_point(BinaryMask.zeros(8, 8), Point(1.5, 6.2))

    def test_contains_out_of_bounds(self):
        with pytest.raises(ValueError):
            mask_contains_point(BinaryMask.full(4, 4), Point(4.0, 1.0))
        with pytest.raises(ValueError):
            mask_contains_point(BinaryMask.full(4, 4), Point(-0.1, 1.0))

    def test_tight_box(self):
        g = np.zeros((8, 8), bool)
        g[5, 3] = True
        assert mask_tight_box(rle_encode(g)) == BBox(3, 5, 4, 6)
        assert mask_tight_box(rect(8, 8, 2, 2, 6, 6)) == BBox(2, 2, 6, 6)
        g = np.zeros((8, 8), bool)
        g[0, 0] = g[7, 7] = True
        assert mask_tight_box(rle_encode(g)) == BBox(0, 0, 8, 8)

    def test_tight_box_empty(self):
        with pytest.raises(EmptyMaskError):
            mask_tight_box(BinaryMask.zeros(3, 3))

    @given(grids(12))
    def test_tight_box_dense(self, g):
        if not g.any():
            return
        ys, xs = np.nonzero(g)
        expected = BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        assert mask_tight_box(rle_encode(g)) == expected

    @settings(max_examples=50)
    @given(grids(10), st.data())
    def test_contains_dense(self, g, data):
        h, w = g.shape
        x = data.draw(st.floats(0, w, exclude_max=True))
        y = data.draw(st.floats(0, h, exclude_max=True))
        assert mask_contains_point(rle_encode(g), Point(x, y)) == bool(g[int(y), int(x)])


class TestSetOps:
    def test_identities(self):
        a = rect(6, 5, 1, 1, 4, 3)
        z = BinaryMask.zeros(6, 5)
        assert mask_union(a, z) == a
        assert mask_subtract(a, z) == a
        assert mask_subtract(a, a) == z

    def test_random_inclusion_exclusion(self, rng):
        for _ in range(50):
            ga, gb = rng.random((16, 16)) < 0.4, rng.random((16, 16)) < 0.4
            a, b = rle_encode(ga), rle_encode(gb)
            u = mask_union(a, b)
            assert mask_area(u) == int((ga | gb).sum())
            assert mask_area(u) == mask_area(a) + mask_area(b) - mask_intersection_area(a, b)
            assert np.array_equal(rle_decode(mask_subtract(a, b)), ga & ~gb)

    def test_from_box(self):
        m = BinaryMask.from_box(5, 4, BBox(1, 1, 3, 4))
        assert np.array_equal(rle_decode(m), grid_rect(5, 4, 1, 1, 3, 4))
