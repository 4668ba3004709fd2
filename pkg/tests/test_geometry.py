from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdfuse.errors import DegeneratePair, EmptyInput, EmptyTracks, GridMismatch
from crowdfuse.geometry import box_average, iou_3d, iou_box, iou_matrix, iou_pixels, pixel_iou_matrix
from crowdfuse.model import BoundingBox, Segment, Track


def raster_iou(a, b, size=20):
    """Count unit cells covered by each integer-corner box on a size x size grid."""
    grid_a = np.zeros((size, size), dtype=bool)
    grid_b = np.zeros((size, size), dtype=bool)
    grid_a[int(a[1]) : int(a[3]), int(a[0]) : int(a[2])] = True
    grid_b[int(b[1]) : int(b[3]), int(b[0]) : int(b[2])] = True
    return (grid_a & grid_b).sum() / (grid_a | grid_b).sum()


# Values produced by raster_iou above and frozen here.
RASTER_CASES = [
    ((0, 0, 10, 10), (5, 0, 15, 10), 50 / 150),
    ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
    ((0, 0, 10, 10), (10, 10, 20, 20), 0.0),
    ((2, 3, 12, 9), (4, 1, 8, 18), 24 / 104),
    ((0, 0, 20, 20), (5, 5, 10, 10), 25 / 400),
]


@pytest.mark.parametrize("a,b,expected", RASTER_CASES)
def test_iou_box_matches_frozen_raster_values(a, b, expected):
    assert raster_iou(a, b) == pytest.approx(expected, abs=1e-12)
    assert iou_box(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(expected, abs=1e-9)


def test_iou_box_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert iou_box(a, a) == 1.0
    assert iou_box(a, BoundingBox(20, 20, 30, 30)) == 0.0
    assert iou_box(a, BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_iou_box_degenerate_pair():
    with pytest.raises(DegeneratePair):
        iou_box(BoundingBox(1, 1, 1, 1), BoundingBox(3, 3, 3, 5))


corner = st.integers(0, 19)


@st.composite
def int_boxes(draw):
    x1, x2 = sorted(draw(st.lists(corner, min_size=2, max_size=2, unique=True)))
    y1, y2 = sorted(draw(st.lists(corner, min_size=2, max_size=2, unique=True)))
    return (x1, y1, x2 + 1, y2 + 1)


@settings(max_examples=300, deadline=None)
@given(int_boxes(), int_boxes())
def test_iou_box_agrees_with_raster(a, b):
    assert iou_box(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(raster_iou(a, b, size=21), abs=1e-9)


real_boxes = st.builds(
    lambda x, y, w, h: BoundingBox(x, y, x + w, y + h),
    st.floats(0, 500),
    st.floats(0, 500),
    st.floats(0.5, 200),
    st.floats(0.5, 200),
)


@settings(max_examples=200, deadline=None)
@given(real_boxes, real_boxes)
def test_iou_box_symmetric_and_bounded(a, b):
    v = iou_box(a, b)
    assert v == iou_box(b, a)
    assert 0.0 <= v <= 1.0
    assert iou_box(a, a) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(real_boxes, min_size=1, max_size=6), st.lists(real_boxes, min_size=1, max_size=6))
def test_iou_matrix_matches_scalar(a, b):
    m = iou_matrix(a, b)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            assert m[i, j] == pytest.approx(iou_box(x, y), abs=1e-12)


def square(x0, y0, side, label="a", grid=(20, 20)):
    cells = frozenset((x, y) for x in range(x0, x0 + side) for y in range(y0, y0 + side))
    return Segment(cells, label, *grid)


def test_iou_pixels_examples():
    a = square(0, 0, 4)
    assert iou_pixels(a, a) == 1.0
    assert iou_pixels(a, square(10, 10, 4)) == 0.0
    # 16 cells each, 8 shared
    b = Segment(frozenset((x + 2, y) for x, y in a.cells), "a", 20, 20)
    assert iou_pixels(a, b) == pytest.approx(8 / 24)


def test_iou_pixels_grid_mismatch():
    with pytest.raises(GridMismatch):
        iou_pixels(square(0, 0, 2), square(0, 0, 2, grid=(30, 30)))


cells = st.frozensets(st.tuples(st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(st.lists(cells, min_size=1, max_size=6))
def test_pixel_iou_matrix_matches_scalar(sets):
    segs = [Segment(c, "a", 10, 10) for c in sets]
    m = pixel_iou_matrix(segs)
    for i, a in enumerate(segs):
        for j, b in enumerate(segs):
            assert m[i, j] == iou_pixels(a, b)


def test_iou_3d_examples():
    a = BoundingBox(0, 0, 10, 10)
    t = Track("car", {0: a, 1: BoundingBox(2, 2, 12, 12)})
    assert iou_3d(t, t) == 1.0
    # identical in frame 1, disjoint equal-area boxes in frame 2
    u = Track("car", {1: a, 2: BoundingBox(0, 0, 10, 10)})
    v = Track("car", {1: a, 2: BoundingBox(50, 50, 60, 60)})
    assert iou_3d(u, v) == pytest.approx(1 / 3)
    # no common frames
    assert iou_3d(Track("car", {0: a}), Track("car", {5: a})) == 0.0


def test_iou_3d_frame_in_one_track_counts_toward_union():
    a = BoundingBox(0, 0, 10, 10)
    long = Track("car", {0: a, 1: a, 2: a, 3: a})
    short = Track("car", {2: a, 3: a})
    assert iou_3d(long, short) == pytest.approx(0.5)


def test_iou_3d_empty():
    with pytest.raises(EmptyTracks):
        iou_3d(Track("car", {}), Track("car", {}))


def test_box_average_examples():
    b = BoundingBox(1, 2, 3, 4)
    assert box_average([b]) == b
    avg = box_average([BoundingBox(0, 0, 100, 100), BoundingBox(10, 5, 105, 98), BoundingBox(5, 2, 102, 101)])
    assert avg.as_tuple() == pytest.approx((5, 2.3333333, 102.3333333, 99.6666667))
    mid = box_average([BoundingBox(0, 0, 10, 10), BoundingBox(10, 10, 20, 20)])
    assert mid.as_tuple() == (5, 5, 15, 15)
    with pytest.raises(EmptyInput):
        box_average([])


@settings(max_examples=200, deadline=None)
@given(st.lists(real_boxes, min_size=1, max_size=8))
def test_box_average_within_input_range(boxes):
    avg = box_average(boxes).as_tuple()
    for k in range(4):
        values = [b.as_tuple()[k] for b in boxes]
        assert min(values) - 1e-9 <= avg[k] <= max(values) + 1e-9
