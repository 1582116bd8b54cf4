import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drivelab import geometry as geo


# --- independent oracles -----------------------------------------------------

def oracle_catmull_rom(p, t, u):
    """Three-level pyramidal recurrence, written independently of the library."""
    p = [np.asarray(q, dtype=np.float64) for q in p]

    def lerp(pa, pb, ta, tb):
        return ((tb - u) * pa + (u - ta) * pb) / (tb - ta)

    a1 = lerp(p[0], p[1], t[0], t[1])
    a2 = lerp(p[1], p[2], t[1], t[2])
    a3 = lerp(p[2], p[3], t[2], t[3])
    b1 = lerp(a1, a2, t[0], t[2])
    b2 = lerp(a2, a3, t[1], t[3])
    return lerp(b1, b2, t[1], t[2])


def oracle_spline_eval(spline, u):
    t = spline.knots
    i = np.searchsorted(t, u, side="right") - 1
    i = min(max(i, 1), len(t) - 3)
    pts = spline.control_points
    return oracle_catmull_rom(pts[i - 1:i + 3], t[i - 1:i + 3], u)


def oracle_arclength(spline, n=100_000):
    us = np.linspace(spline.u_min, spline.u_max, n + 1)
    pts = np.array([oracle_spline_eval(spline, u) for u in us])
    return np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))


def mc_rect_overlap(pose_a, half_a, pose_b, half_b, n=1_000_000, seed=0):
    """Monte-Carlo overlap decision: sample the union bounding box and check
    membership in both rectangles."""
    rng = np.random.default_rng(seed)
    corners = np.vstack([geo.rect_corners(pose_a, half_a),
                         geo.rect_corners(pose_b, half_b)])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(pts, pose, half):
        rel = pts - pose.position
        c, s = math.cos(-pose.heading), math.sin(-pose.heading)
        local = np.column_stack([c * rel[:, 0] - s * rel[:, 1],
                                 s * rel[:, 0] + c * rel[:, 1]])
        return (np.abs(local[:, 0]) <= half[0]) & (np.abs(local[:, 1]) <= half[1])

    return bool(np.any(inside(pts, pose_a, half_a) & inside(pts, pose_b, half_b)))


# --- spline ------------------------------------------------------------------

def test_collinear_midpoint():
    sp = geo.build_spline([(0, 0), (1, 0), (2, 0), (3, 0)])
    # midpoint of the middle span (between control points (1,0) and (2,0))
    u = 0.5 * (sp.knots[2] + sp.knots[3])
    assert np.allclose(geo.spline_eval(sp, u), [1.5, 0.0], atol=1e-9)


def test_interpolation_property():
    rng = np.random.default_rng(7)
    for _ in range(20):
        pts = rng.uniform(-5, 5, size=(6, 2))
        sp = geo.build_spline(pts)
        for i in range(1, len(sp.control_points) - 1):
            u = sp.knots[i]
            assert np.linalg.norm(geo.spline_eval(sp, u) - sp.control_points[i]) < 1e-9


def test_matches_pyramidal_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        pts = rng.uniform(-10, 10, size=(6, 2))
        sp = geo.build_spline(pts)
        for u in rng.uniform(sp.u_min, sp.u_max, size=5):
            assert np.linalg.norm(geo.spline_eval(sp, u) - oracle_spline_eval(sp, u)) < 1e-9


def test_out_of_range_parameter():
    sp = geo.build_spline([(0, 0), (1, 0), (2, 0), (3, 0)])
    with pytest.raises(ValueError):
        geo.spline_eval(sp, sp.u_max + 1.0)


def test_arclength_straight():
    sp = geo.build_spline([(0, 0), (1, 0), (2, 0), (3, 0)])
    p, heading, clamped = geo.spline_point_at_arclength(sp, 1.5)
    assert np.allclose(p, [1.5, 0.0], atol=1e-6)
    assert abs(heading) < 1e-6
    assert not clamped
    p0, _, _ = geo.spline_point_at_arclength(sp, 0.0)
    assert np.allclose(p0, [0.0, 0.0], atol=1e-9)


def test_arclength_clamped():
    sp = geo.build_spline([(0, 0), (1, 0), (2, 0), (3, 0)])
    p, _, clamped = geo.spline_point_at_arclength(sp, 100.0)
    assert clamped
    assert np.allclose(p, [3.0, 0.0], atol=1e-6)


def test_arclength_vs_dense_oracle():
    # quarter-circle-like control polygon
    pts = [(math.cos(a), math.sin(a)) for a in np.linspace(0, math.pi / 2, 6)]
    sp = geo.build_spline(pts)
    assert abs(sp.length - oracle_arclength(sp)) < 0.01
    p, _, _ = geo.spline_point_at_arclength(sp, sp.length / 2)
    # halfway along a symmetric arc lands near 45 degrees
    assert abs(math.atan2(p[1], p[0]) - math.pi / 4) < 0.02


def test_arclength_monotone():
    rng = np.random.default_rng(11)
    pts = rng.uniform(-5, 5, size=(6, 2))
    sp = geo.build_spline(pts)
    ds = np.linspace(0, sp.length, 200)
    us = []
    for d in ds:
        j = np.searchsorted(sp.arc_table[:, 1], d, side="right") - 1
        j = min(max(j, 0), len(sp.arc_table) - 2)
        us.append(sp.arc_table[j, 0])
    assert np.all(np.diff(us) >= 0)


# --- ray casting -------------------------------------------------------------

def test_ray_hits_vertical_segment():
    seg = np.array([[[5.0, -1.0], [5.0, 1.0]]])
    assert geo.ray_cast((0, 0), 0.0, seg, 50.0) == pytest.approx(5.0, abs=1e-12)


def test_ray_miss_returns_max_range():
    assert geo.ray_cast((0, 0), 0.3, np.zeros((0, 2, 2)), 50.0) == 50.0


def test_ray_nearest_hit():
    segs = np.array([[[3.0, -5.0], [3.0, 5.0]], [[7.0, -5.0], [7.0, 5.0]]])
    assert geo.ray_cast((0, 0), 0.0, segs, 50.0) == pytest.approx(3.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0.5, 20.0))
def test_ray_cast_symmetry(angle, dist):
    # place a wall perpendicular to the ray at the given distance
    hit = np.array([dist * math.cos(angle), dist * math.sin(angle)])
    perp = np.array([-math.sin(angle), math.cos(angle)])
    seg = np.array([np.stack([hit - 3 * perp, hit + 3 * perp])])
    t = geo.ray_cast((0, 0), angle, seg, 50.0)
    assert t == pytest.approx(dist, abs=1e-9)
    # cast back from the hit point toward the origin against a wall there
    back_seg = np.array([np.stack([-3 * perp, 3 * perp])])
    t_back = geo.ray_cast(hit, geo.normalize_angle(angle + math.pi), back_seg, 50.0)
    assert t_back == pytest.approx(t, abs=1e-6)


def test_ray_circle():
    d = geo.ray_cast_circles(np.zeros(2), np.array([0.0]),
                             np.array([[10.0, 0.0]]), np.array([2.0]), 50.0)
    assert d[0] == pytest.approx(8.0)
    miss = geo.ray_cast_circles(np.zeros(2), np.array([math.pi]),
                                np.array([[10.0, 0.0]]), np.array([2.0]), 50.0)
    assert miss[0] == 50.0


# --- rectangles --------------------------------------------------------------

def _pose(x, y, h=0.0):
    return geo.Pose(geo.vec2(x, y), h)


def test_rect_identical():
    assert geo.rect_overlap(_pose(0, 0), (1, 1), _pose(0, 0), (1, 1))


def test_rect_far_apart():
    assert not geo.rect_overlap(_pose(0, 0), (0.5, 0.5), _pose(10, 0), (0.5, 0.5))


def test_rect_rotated_vs_mc_oracle():
    a = _pose(0, 0)
    b = _pose(1.0, 0, math.pi / 4)
    half = (0.5, 0.5)
    assert geo.rect_overlap(a, half, b, half) == mc_rect_overlap(a, half, b, half)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi))
def test_rect_overlap_symmetric(x, y, h):
    a = _pose(0, 0, 0.3)
    b = _pose(x, y, h)
    ha, hb = (2.25, 1.0), (1.0, 0.6)
    assert geo.rect_overlap(a, ha, b, hb) == geo.rect_overlap(b, hb, a, ha)


def test_rect_circle_overlap():
    assert geo.rect_circle_overlap(_pose(0, 0), (1, 1), (1.5, 0), 0.6)
    assert not geo.rect_circle_overlap(_pose(0, 0), (1, 1), (3.0, 0), 0.5)


def test_points_in_polygon():
    square = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float)
    pts = np.array([[2, 2], [5, 2], [-1, -1], [3.9, 3.9]])
    inside = geo.points_in_polygon(pts, square)
    assert inside.tolist() == [True, False, False, True]
