"""2D geometry primitives: vectors, segments, and arc-length parameterized polylines.

Points and vectors are plain (x, y) tuples; batch operations take numpy arrays.
All lengths are in meters, angles in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Point = tuple[float, float]

EPS = 1e-12


def add(a: Point, b: Point) -> Point:
    return (a[0] + b[0], a[1] + b[1])


def sub(a: Point, b: Point) -> Point:
    return (a[0] - b[0], a[1] - b[1])


def scale(v: Point, k: float) -> Point:
    return (v[0] * k, v[1] * k)


def dot(a: Point, b: Point) -> float:
    return a[0] * b[0] + a[1] * b[1]


def cross(a: Point, b: Point) -> float:
    return a[0] * b[1] - a[1] * b[0]


def norm(v: Point) -> float:
    return math.hypot(v[0], v[1])


def dist(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def normalize(v: Point) -> Point:
    n = norm(v)
    if n < EPS:
        return (1.0, 0.0)
    return (v[0] / n, v[1] / n)


def perp_left(v: Point) -> Point:
    """Rotate v by +90 degrees."""
    return (-v[1], v[0])


def rotate(v: Point, angle: float) -> Point:
    c, s = math.cos(angle), math.sin(angle)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])


def angle_of(v: Point) -> float:
    return math.atan2(v[1], v[0])


def unit(angle: float) -> Point:
    return (math.cos(angle), math.sin(angle))


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def closest_point_on_segment(p: Point, a: Point, b: Point) -> Point:
    ab = sub(b, a)
    denom = dot(ab, ab)
    if denom < EPS:
        return a
    t = dot(sub(p, a), ab) / denom
    t = min(1.0, max(0.0, t))
    return (a[0] + t * ab[0], a[1] + t * ab[1])


def point_segment_distance(p: Point, a: Point, b: Point) -> float:
    return dist(p, closest_point_on_segment(p, a, b))


def segment_blocks(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """True if segment q1-q2 blocks the open sight segment p1-p2.

    The sight segment is open at both ends: touching a wall exactly at p1 or
    p2 (e.g. a sign mounted on that wall) does not count as blocking. The
    wall segment q1-q2 is closed.
    """
    d1 = sub(p2, p1)
    d2 = sub(q2, q1)
    r = sub(q1, p1)
    denom = cross(d1, d2)
    if abs(denom) > EPS:
        t = cross(r, d2) / denom
        u = cross(r, d1) / denom
        return EPS < t < 1.0 - EPS and -EPS <= u <= 1.0 + EPS
    # Parallel: blocked only if collinear with interior overlap.
    if abs(cross(r, d1)) > EPS:
        return False
    len2 = dot(d1, d1)
    if len2 < EPS:
        return False
    s0 = dot(r, d1) / len2
    s1 = dot(sub(q2, p1), d1) / len2
    lo, hi = min(s0, s1), max(s0, s1)
    return min(hi, 1.0) - max(lo, 0.0) > EPS


def segment_segment_distance(p1: Point, p2: Point, q1: Point, q2: Point) -> float:
    if segment_blocks(p1, p2, q1, q2):
        return 0.0
    return min(
        point_segment_distance(p1, q1, q2),
        point_segment_distance(p2, q1, q2),
        point_segment_distance(q1, p1, p2),
        point_segment_distance(q2, p1, p2),
    )


# --- numpy batch helpers ------------------------------------------------

def walls_array(walls) -> np.ndarray:
    """Stack wall segments into an (W, 4) float array [x1, y1, x2, y2]."""
    if len(walls) == 0:
        return np.zeros((0, 4))
    return np.asarray([[w[0][0], w[0][1], w[1][0], w[1][1]] for w in walls], dtype=float)


def points_walls_distance(points: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Distance from each point (N,2) to each wall (W,4); returns (N, W)."""
    if walls.shape[0] == 0:
        return np.full((points.shape[0], 0), np.inf)
    a = walls[:, 0:2][None, :, :]          # (1, W, 2)
    ab = (walls[:, 2:4] - walls[:, 0:2])[None, :, :]
    p = points[:, None, :]                 # (N, 1, 2)
    len2 = np.einsum("nwc,nwc->nw", ab, ab)
    t = np.einsum("nwc,nwc->nw", p - a, np.broadcast_to(ab, (points.shape[0],) + ab.shape[1:]))
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(len2 > 0, t / np.where(len2 > 0, len2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, :, None] * ab
    diff = p - closest
    return np.sqrt(np.einsum("nwc,nwc->nw", diff, diff))


def segments_walls_clearance(starts: np.ndarray, ends: np.ndarray, walls: np.ndarray,
                             samples: int = 8) -> np.ndarray:
    """Approximate min distance of each segment (N,2)->(N,2) to every wall.

    Exact for the endpoints-vs-wall and wall-endpoints-vs-segment terms;
    crossing segments are detected exactly, so the only approximation is the
    interior sampling of near-parallel non-crossing pairs, bounded by the
    sample spacing. Returns (N, W).
    """
    n = starts.shape[0]
    w = walls.shape[0]
    if n == 0 or w == 0:
        return np.full((n, w), np.inf)
    out = np.minimum(points_walls_distance(starts, walls), points_walls_distance(ends, walls))
    # wall endpoints against the query segments (transpose roles)
    qseg = np.concatenate([starts, ends], axis=1)  # (N,4)
    out = np.minimum(out, points_walls_distance(walls[:, 0:2], qseg).T)
    out = np.minimum(out, points_walls_distance(walls[:, 2:4], qseg).T)
    # interior samples catch crossings
    for k in range(1, samples):
        f = k / samples
        pts = starts + f * (ends - starts)
        out = np.minimum(out, points_walls_distance(pts, walls))
    # exact crossing test
    p1 = starts[:, None, :]
    d1 = (ends - starts)[:, None, :]
    q1 = walls[None, :, 0:2]
    d2 = (walls[:, 2:4] - walls[:, 0:2])[None, :, :]
    r = q1 - p1
    denom = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(np.abs(denom) > EPS, (r[..., 0] * d2[..., 1] - r[..., 1] * d2[..., 0]) / np.where(np.abs(denom) > EPS, denom, 1.0), -1.0)
        u = np.where(np.abs(denom) > EPS, (r[..., 0] * d1[..., 1] - r[..., 1] * d1[..., 0]) / np.where(np.abs(denom) > EPS, denom, 1.0), -1.0)
    crossing = (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0) & (np.abs(denom) > EPS)
    out = np.where(crossing, 0.0, out)
    return out


# --- polylines -----------------------------------------------------------

@dataclass(frozen=True)
class PathPolyline:
    """Ordered waypoints with cumulative arc length, shared by routes,
    guiding lines and motion-compression target paths."""

    vertices: tuple[Point, ...]
    cumulative_arclength: tuple[float, ...]

    @staticmethod
    def from_points(points, dedup_tol: float = 1e-9) -> "PathPolyline":
        verts: list[Point] = []
        for p in points:
            p = (float(p[0]), float(p[1]))
            if verts and dist(verts[-1], p) <= dedup_tol:
                continue
            verts.append(p)
        if not verts:
            raise ValueError("polyline needs at least one vertex")
        cum = [0.0]
        for i in range(1, len(verts)):
            cum.append(cum[-1] + dist(verts[i - 1], verts[i]))
        return PathPolyline(tuple(verts), tuple(cum))

    @property
    def length(self) -> float:
        return self.cumulative_arclength[-1]

    def segment_lengths(self) -> list[float]:
        c = self.cumulative_arclength
        return [c[i + 1] - c[i] for i in range(len(c) - 1)]

    def turning_angles(self) -> list[float]:
        """Signed heading change at each interior waypoint."""
        out = []
        for i in range(1, len(self.vertices) - 1):
            h0 = angle_of(sub(self.vertices[i], self.vertices[i - 1]))
            h1 = angle_of(sub(self.vertices[i + 1], self.vertices[i]))
            out.append(wrap_angle(h1 - h0))
        return out

    def point_at(self, s: float) -> Point:
        s = min(max(s, 0.0), self.length)
        c = self.cumulative_arclength
        for i in range(len(c) - 1):
            if s <= c[i + 1] or i == len(c) - 2:
                seg = c[i + 1] - c[i]
                f = 0.0 if seg <= 0 else (s - c[i]) / seg
                a, b = self.vertices[i], self.vertices[i + 1]
                return (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))
        return self.vertices[-1]

    def heading_at(self, s: float) -> float:
        """Tangent heading of the segment containing arc length s."""
        if len(self.vertices) == 1:
            return 0.0
        s = min(max(s, 0.0), self.length)
        c = self.cumulative_arclength
        for i in range(len(c) - 1):
            if s < c[i + 1] or i == len(c) - 2:
                return angle_of(sub(self.vertices[i + 1], self.vertices[i]))
        return angle_of(sub(self.vertices[-1], self.vertices[-2]))

    def project(self, p: Point) -> tuple[float, float]:
        """Arc length and distance of the closest point on the polyline to p."""
        if len(self.vertices) == 1:
            return 0.0, dist(p, self.vertices[0])
        best_s, best_d = 0.0, float("inf")
        c = self.cumulative_arclength
        for i in range(len(self.vertices) - 1):
            a, b = self.vertices[i], self.vertices[i + 1]
            q = closest_point_on_segment(p, a, b)
            d = dist(p, q)
            if d < best_d:
                best_d = d
                best_s = c[i] + dist(a, q)
        return best_s, best_d

    def resample(self, spacing: float) -> np.ndarray:
        """Points every `spacing` meters along the path (endpoints included)."""
        n = max(2, int(math.ceil(self.length / spacing)) + 1)
        ss = np.linspace(0.0, self.length, n)
        return np.asarray([self.point_at(float(s)) for s in ss])

    def validate(self, tol: float = 1e-9) -> None:
        c = self.cumulative_arclength
        if len(c) != len(self.vertices):
            raise ValueError("arclength table cardinality mismatch")
        if c[0] != 0.0:
            raise ValueError("cumulative arclength must start at 0")
        run = 0.0
        for i in range(1, len(self.vertices)):
            step = dist(self.vertices[i - 1], self.vertices[i])
            if step <= 0:
                raise ValueError("consecutive vertices must be distinct")
            run += step
            if abs(c[i] - run) > tol:
                raise ValueError("cumulative arclength inconsistent with vertices")
            if c[i] <= c[i - 1]:
                raise ValueError("cumulative arclength must be strictly increasing")
