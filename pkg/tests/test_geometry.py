import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from frustum3d.geometry import (Box3D, FrustumFrame, box_corners, box_from_corners,
                                box_from_frustum_frame, box_to_frustum_frame, clip_polygon,
                                corner_distance, footprint, from_frustum_frame, iou_3d, iou_bev,
                                points_in_box, polygon_area, to_frustum_frame, wrap_angle)
from oracles import monte_carlo_iou, random_box_pair

angles = st.floats(-20, 20, allow_nan=False)
boxes = st.builds(Box3D, st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
                  st.floats(0.1, 4), st.floats(0.1, 4), st.floats(0.1, 4), angles)


@given(angles)
def test_wrap_angle_range_and_equivalence(t):
    w = wrap_angle(t)
    assert -math.pi < w <= math.pi
    assert math.cos(w) == pytest.approx(math.cos(t), abs=1e-9)
    assert math.sin(w) == pytest.approx(math.sin(t), abs=1e-9)


def test_wrap_angle_endpoints():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(-0.0) == 0.0


def test_box_validation():
    with pytest.raises(ValueError):
        Box3D(0, 0, 0, 0.0, 1, 1)
    with pytest.raises(ValueError):
        Box3D(0, 0, float("nan"), 1, 1, 1)


def test_axis_aligned_corners():
    c = box_corners(Box3D(0, 0, 0, 2, 2, 2, 0.0))
    assert sorted(map(tuple, c)) == sorted(
        (x, y, z) for x in (-1.0, 1.0) for y in (-1.0, 1.0) for z in (-1.0, 1.0))


def test_quarter_turn_swaps_length_and_width():
    fp = footprint(Box3D(0, 0, 0, 1, 1.0, 3.0, math.pi / 2))
    span = fp.max(axis=0) - fp.min(axis=0)
    np.testing.assert_allclose(span, [1.0, 3.0], atol=1e-12)


@given(boxes)
def test_corners_round_trip(b):
    r = box_from_corners(box_corners(b))
    np.testing.assert_allclose(r.as_array()[:6], b.as_array()[:6], atol=1e-9)
    assert abs(wrap_angle(r.theta - b.theta)) < 1e-9


def test_shoelace_and_clip():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    assert polygon_area(sq) == 1.0
    assert polygon_area(sq[::-1]) == -1.0
    shifted = sq + [0.5, 0.5]
    assert polygon_area(clip_polygon(sq, shifted)) == pytest.approx(0.25, abs=1e-15)
    assert len(clip_polygon(sq, sq + 5.0)) == 0


def test_iou_trivial_cases():
    a = Box3D(0.3, -0.2, 0.1, 1.2, 0.7, 2.2, 0.4)
    assert iou_bev(a, a) == pytest.approx(1.0, abs=1e-9)
    assert iou_3d(a, a) == pytest.approx(1.0, abs=1e-9)
    u = Box3D(0, 0, 0, 1, 1, 1)
    v = Box3D(0.5, 0, 0, 1, 1, 1)
    assert iou_bev(u, v) == pytest.approx(1 / 3, abs=1e-9)
    assert iou_3d(u, v) == pytest.approx(1 / 3, abs=1e-9)
    assert iou_3d(u, Box3D(0, 0, 5, 1, 1, 1)) == 0.0


def test_iou_rotated_square_vs_monte_carlo():
    a = Box3D(0, 0, 0, 1, 1, 1, 0.0)
    b = a.replace(theta=math.pi / 4)
    assert iou_bev(a, b) == pytest.approx(monte_carlo_iou(a, b, 10**6, bev=True), abs=2e-3)


def test_iou_random_pairs_vs_monte_carlo(rng):
    for _ in range(10):
        a, b = random_box_pair(rng)
        assert iou_3d(a, b) == pytest.approx(monte_carlo_iou(a, b, 2 * 10**5, rng), abs=5e-3)
        assert iou_bev(a, b) == pytest.approx(monte_carlo_iou(a, b, 2 * 10**5, rng, bev=True),
                                              abs=5e-3)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    for f in (iou_bev, iou_3d):
        v = f(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(f(b, a), abs=1e-9)


def test_corner_distance_examples():
    a = Box3D(0, 0, 0, 1.5, 1.0, 3.0, 0.3)
    assert corner_distance(a, a) == 0.0
    assert corner_distance(a, a.flipped()) == pytest.approx(0.0, abs=1e-12)
    assert corner_distance(a, a.replace(cx=1.0)) == pytest.approx(1.0, abs=1e-12)


def test_frustum_frame_identity_and_round_trip(rng):
    pts = rng.normal(size=(50, 7))
    np.testing.assert_array_equal(to_frustum_frame(pts, FrustumFrame()), pts)
    frame = FrustumFrame(0.7, (1.0, -2.0, 0.5))
    back = from_frustum_frame(to_frustum_frame(pts, frame), frame)
    assert np.max(np.abs(back - pts)) < 1e-9
    np.testing.assert_array_equal(back[:, 3:], pts[:, 3:])


def test_frustum_rotation_points_to_axis():
    frame = FrustumFrame(0.4)
    p = np.array([[math.cos(0.4) * 7, math.sin(0.4) * 7, 1.0]])
    np.testing.assert_allclose(to_frustum_frame(p, frame), [[7.0, 0.0, 1.0]], atol=1e-12)


@given(boxes, st.floats(-3, 3))
def test_box_frame_round_trip(b, angle):
    frame = FrustumFrame(angle, (0.5, 0.0, -1.0))
    r = box_from_frustum_frame(box_to_frustum_frame(b, frame), frame)
    np.testing.assert_allclose(r.center, b.center, atol=1e-9)
    assert abs(wrap_angle(r.theta - b.theta)) < 1e-9


def test_containment_preserved_under_frame_change(rng):
    b = Box3D(6.0, 0.4, -0.8, 1.5, 1.6, 3.9, 1.1)
    pts = b.center + rng.uniform(-2.5, 2.5, (2000, 3))
    inside = points_in_box(pts, b)
    assert 0 < inside.sum() < len(pts)
    frame = FrustumFrame(-0.35)
    moved = points_in_box(to_frustum_frame(pts, frame), box_to_frustum_frame(b, frame))
    np.testing.assert_array_equal(inside, moved)
