"""Planar primitives: poses, centripetal Catmull-Rom splines with arc-length
lookup, ray casting, and oriented-rectangle overlap tests.

Everything here is a pure function over immutable inputs, so it is safe to
call from any number of concurrent rollout workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Degenerate ray/segment hits closer than this are treated as misses.
EPS = 1e-9


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    theta = math.fmod(theta, TWO_PI)
    if theta <= -math.pi:
        theta += TWO_PI
    elif theta > math.pi:
        theta -= TWO_PI
    return theta


def vec2(x: float, y: float) -> np.ndarray:
    return np.array([x, y], dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    """Position plus heading, heading normalized into (-pi, pi]."""

    position: np.ndarray
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def x(self) -> float:
        return float(self.position[0])

    @property
    def y(self) -> float:
        return float(self.position[1])


# ---------------------------------------------------------------------------
# Centripetal Catmull-Rom splines
# ---------------------------------------------------------------------------

CENTRIPETAL_EXPONENT = 0.5
ARC_TABLE_RESOLUTION = 0.1  # meters


@dataclass
class Spline:
    """Centripetal Catmull-Rom curve through `control_points`.

    knots follow the centripetal rule knot_{i+1} - knot_i = |P_{i+1}-P_i|^0.5.
    The curve is evaluable on the interior spans [knots[1], knots[-2]].
    arc_table maps curve parameter u to cumulative arc length (meters) at
    roughly 0.1 m spacing, enabling O(log n) arc-length lookups.
    """

    control_points: np.ndarray  # (N, 2)
    knots: np.ndarray  # (N,)
    arc_table: np.ndarray = field(default=None, repr=False)  # (M, 2): (u, s)

    @property
    def u_min(self) -> float:
        return float(self.knots[1])

    @property
    def u_max(self) -> float:
        return float(self.knots[-2])

    @property
    def length(self) -> float:
        return float(self.arc_table[-1, 1])


def _centripetal_knots(points: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(np.diff(points, axis=0), axis=1) ** CENTRIPETAL_EXPONENT
    if np.any(d <= 0):
        raise ValueError("coincident consecutive control points")
    return np.concatenate([[0.0], np.cumsum(d)])


def build_spline(points, resolution: float = ARC_TABLE_RESOLUTION) -> Spline:
    """Build a spline through `points` (>= 2), extending both ends with
    reflected phantom points so the whole path is evaluable."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least 2 planar points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite control point")
    ext = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
    knots = _centripetal_knots(ext)
    spline = Spline(control_points=ext, knots=knots)
    spline.arc_table = _build_arc_table(spline, resolution)
    return spline


def _build_arc_table(spline: Spline, resolution: float) -> np.ndarray:
    chord = float(np.sum(np.linalg.norm(np.diff(spline.control_points, axis=0), axis=1)))
    n = max(int(math.ceil(chord / resolution)) * 2, 64)
    us = np.linspace(spline.u_min, spline.u_max, n + 1)
    pts = spline_eval_many(spline, us)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    # Strictly increasing cumulative lengths are required for searchsorted.
    s = np.maximum.accumulate(s + np.arange(len(s)) * 1e-12)
    return np.column_stack([us, s])


def _span_index(spline: Spline, u: float) -> int:
    knots = spline.knots
    if u < spline.u_min - EPS or u > spline.u_max + EPS:
        raise ValueError(f"parameter {u} outside evaluable range "
                         f"[{spline.u_min}, {spline.u_max}]")
    i = int(np.searchsorted(knots, u, side="right")) - 1
    return min(max(i, 1), len(knots) - 3)


def spline_eval(spline: Spline, u: float) -> np.ndarray:
    """Evaluate the curve at knot parameter u (interior spans only)."""
    i = _span_index(spline, float(u))
    p = spline.control_points
    t = spline.knots
    return _catmull_rom_point(p[i - 1], p[i], p[i + 1], p[i + 2],
                              t[i - 1], t[i], t[i + 1], t[i + 2], float(u))


def spline_eval_many(spline: Spline, us: np.ndarray) -> np.ndarray:
    """Vectorized evaluation: points grouped by span, one broadcast pyramid
    per span."""
    us = np.asarray(us, dtype=np.float64)
    knots = spline.knots
    if np.any(us < spline.u_min - EPS) or np.any(us > spline.u_max + EPS):
        raise ValueError("parameter outside evaluable range")
    idx = np.clip(np.searchsorted(knots, us, side="right") - 1,
                  1, len(knots) - 3)
    p = spline.control_points
    out = np.empty((len(us), 2))
    for i in np.unique(idx):
        m = idx == i
        out[m] = _catmull_rom_point(p[i - 1], p[i], p[i + 1], p[i + 2],
                                    knots[i - 1], knots[i], knots[i + 1],
                                    knots[i + 2], us[m][:, None])
    return out


def _catmull_rom_point(p0, p1, p2, p3, t0, t1, t2, t3, u):
    # Pyramidal (Barry-Goldman) formulation of the non-uniform Catmull-Rom
    # segment between p1 and p2.
    a1 = (t1 - u) / (t1 - t0) * p0 + (u - t0) / (t1 - t0) * p1
    a2 = (t2 - u) / (t2 - t1) * p1 + (u - t1) / (t2 - t1) * p2
    a3 = (t3 - u) / (t3 - t2) * p2 + (u - t2) / (t3 - t2) * p3
    b1 = (t2 - u) / (t2 - t0) * a1 + (u - t0) / (t2 - t0) * a2
    b2 = (t3 - u) / (t3 - t1) * a2 + (u - t1) / (t3 - t1) * a3
    return (t2 - u) / (t2 - t1) * b1 + (u - t1) / (t2 - t1) * b2


def spline_point_at_arclength(spline: Spline, d: float):
    """Position and tangent heading at arc length d along the curve.

    d outside [0, length] is clamped to the endpoints; the third element of
    the return flags whether clamping occurred.
    """
    table = spline.arc_table
    length = spline.length
    clamped = d < 0.0 or d > length
    d = min(max(float(d), 0.0), length)
    us, ss = table[:, 0], table[:, 1]
    j = int(np.searchsorted(ss, d, side="right")) - 1
    j = min(max(j, 0), len(ss) - 2)
    frac = (d - ss[j]) / (ss[j + 1] - ss[j])
    u = us[j] + frac * (us[j + 1] - us[j])
    # Tangent from a symmetric parameter difference, shrunk at the ends.
    du = (spline.u_max - spline.u_min) * 1e-5
    ua = max(u - du, spline.u_min)
    ub = min(u + du, spline.u_max)
    point, pa, pb = spline_eval_many(spline, np.array([u, ua, ub]))
    delta = pb - pa
    heading = math.atan2(delta[1], delta[0])
    return point, heading, clamped


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def ray_cast(origin, direction: float, segments: np.ndarray, max_range: float) -> float:
    """Distance along the ray from `origin` at angle `direction` to the
    nearest of `segments` ((M, 2, 2) array), or `max_range` on a miss."""
    hits = ray_cast_multi(np.asarray(origin, dtype=np.float64),
                          np.array([direction]), segments, max_range)
    return float(hits[0])


def ray_cast_multi(origin: np.ndarray, directions: np.ndarray,
                   segments: np.ndarray, max_range: float) -> np.ndarray:
    """Vectorized ray cast: one origin, many directions, many segments."""
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    dirs = np.column_stack([np.cos(directions), np.sin(directions)])  # (R, 2)
    out = np.full(len(directions), max_range, dtype=np.float64)
    if segments is None or len(segments) == 0:
        return out
    segments = np.asarray(segments, dtype=np.float64)
    a = segments[:, 0]  # (M, 2)
    ab = segments[:, 1] - a  # (M, 2)
    ao = origin[None, :] - a  # (M, 2)
    # Solve origin + t*dir = a + s*ab for each (ray, segment) pair.
    # denom = cross(dir, ab); parallel pairs (|denom| ~ 0) are misses.
    denom = dirs[:, 0, None] * ab[None, :, 1] - dirs[:, 1, None] * ab[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -(ao[None, :, 0] * ab[None, :, 1] - ao[None, :, 1] * ab[None, :, 0]) / denom
        s = (ao[None, :, 0] * dirs[:, 1, None] - ao[None, :, 1] * dirs[:, 0, None]) / -denom
    valid = (np.abs(denom) > EPS) & (t >= 0.0) & (s >= -EPS) & (s <= 1.0 + EPS)
    t = np.where(valid, t, np.inf)
    nearest = t.min(axis=1)
    return np.minimum(out, np.where(np.isfinite(nearest), nearest, max_range))


def ray_cast_circles(origin: np.ndarray, directions: np.ndarray,
                     centers: np.ndarray, radii: np.ndarray,
                     max_range: float) -> np.ndarray:
    """Vectorized ray-vs-disc cast; returns max_range on misses."""
    out = np.full(len(directions), max_range, dtype=np.float64)
    if centers is None or len(centers) == 0:
        return out
    dirs = np.column_stack([np.cos(directions), np.sin(directions)])  # (R, 2)
    oc = np.asarray(centers, dtype=np.float64) - origin[None, :]  # (M, 2)
    proj = dirs @ oc.T  # (R, M)
    perp2 = (oc[None, :, 0] ** 2 + oc[None, :, 1] ** 2) - proj ** 2
    r2 = np.asarray(radii, dtype=np.float64)[None, :] ** 2
    disc = r2 - perp2
    with np.errstate(invalid="ignore"):
        root = np.sqrt(np.maximum(disc, 0.0))
    t = proj - root
    valid = (disc >= 0.0) & (t >= 0.0)
    t = np.where(valid, t, np.inf)
    nearest = t.min(axis=1)
    return np.minimum(out, np.where(np.isfinite(nearest), nearest, max_range))


# ---------------------------------------------------------------------------
# Oriented rectangles
# ---------------------------------------------------------------------------


def rect_corners(pose: Pose, half_extents) -> np.ndarray:
    """Corners of an oriented rectangle, CCW starting front-left."""
    hl, hw = float(half_extents[0]), float(half_extents[1])
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    rot = np.array([[c, -s], [s, c]])
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ rot.T + pose.position[None, :]


def rect_edges(pose: Pose, half_extents) -> np.ndarray:
    """Edges of an oriented rectangle as a (4, 2, 2) segment array."""
    corners = rect_corners(pose, half_extents)
    return np.stack([np.stack([corners[i], corners[(i + 1) % 4]]) for i in range(4)])


def _project_extent(corners: np.ndarray, axis: np.ndarray):
    proj = corners @ axis
    return proj.min(), proj.max()


def rect_overlap(pose_a: Pose, half_a, pose_b: Pose, half_b) -> bool:
    """Separating-axis intersection test for two oriented rectangles."""
    if min(half_a) <= 0 or min(half_b) <= 0:
        raise ValueError("half-extents must be positive")
    ca = rect_corners(pose_a, half_a)
    cb = rect_corners(pose_b, half_b)
    return convex_overlap(ca, cb)


def convex_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """SAT overlap test for two convex polygons given as CCW corner arrays."""
    for corners in (corners_a, corners_b):
        n = len(corners)
        for i in range(n):
            edge = corners[(i + 1) % n] - corners[i]
            axis = np.array([-edge[1], edge[0]])
            norm = np.linalg.norm(axis)
            if norm < EPS:
                continue
            axis = axis / norm
            amin, amax = _project_extent(corners_a, axis)
            bmin, bmax = _project_extent(corners_b, axis)
            if amax < bmin or bmax < amin:
                return False
    return True


def rect_circle_overlap(pose: Pose, half_extents, center, radius: float) -> bool:
    """Oriented rectangle vs disc overlap."""
    c, s = math.cos(-pose.heading), math.sin(-pose.heading)
    rel = np.asarray(center, dtype=np.float64) - pose.position
    local = np.array([c * rel[0] - s * rel[1], s * rel[0] + c * rel[1]])
    closest = np.clip(local, [-half_extents[0], -half_extents[1]],
                      [half_extents[0], half_extents[1]])
    return float(np.linalg.norm(local - closest)) <= radius


# ---------------------------------------------------------------------------
# Polygons
# ---------------------------------------------------------------------------


def polygon_edges(polygon: np.ndarray) -> np.ndarray:
    """Closed polygon outline as an (n, 2, 2) segment array."""
    poly = np.asarray(polygon, dtype=np.float64)
    nxt = np.roll(poly, -1, axis=0)
    return np.stack([poly, nxt], axis=1)


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over points.

    Boundary points count as inside (within float tolerance of the crossing
    rule); adequate for off-road checks on maps with generous margins.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    poly = np.asarray(polygon, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    j = len(poly) - 1
    for i in range(len(poly)):
        xi, yi = poly[i]
        xj, yj = poly[j]
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xcross)
        j = i
    return inside
