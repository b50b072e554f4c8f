"""Planar geometry: poses, convex polygons, polylines.

Everything works in a flat world frame (meters, radians CCW from +x).
The vectorized helpers take coordinate arrays of any shape and are pure
elementwise numpy, so evaluating a subset of points gives bit-identical
results to evaluating the whole set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_world(self, local: np.ndarray) -> np.ndarray:
        """Map (N, 2) points from this pose's frame to the world frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        local = np.asarray(local, dtype=float)
        wx = self.x + c * local[..., 0] - s * local[..., 1]
        wy = self.y + s * local[..., 0] + c * local[..., 1]
        return np.stack([wx, wy], axis=-1)

    def to_local(self, px, py):
        """Longitudinal/lateral offsets of world points in this pose's frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx = np.subtract(px, self.x)
        dy = np.subtract(py, self.y)
        return c * dx + s * dy, -s * dx + c * dy


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def is_convex(poly: np.ndarray) -> bool:
    n = len(poly)
    sign = 0
    for i in range(n):
        a, b, c = poly[i], poly[(i + 1) % n], poly[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) < 1e-12:
            continue
        s = 1 if cross > 0 else -1
        if sign and s != sign:
            return False
        sign = s
    return sign != 0


def ccw(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    if polygon_area(poly) < 0:
        poly = poly[::-1].copy()
    return poly


def rectangle(length: float, width: float) -> np.ndarray:
    """Axis-aligned rectangle centred on the origin, CCW."""
    hl, hw = 0.5 * length, 0.5 * width
    return np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])


def _segment_dist2(px, py, ax: float, ay: float, bx: float, by: float):
    ex, ey = bx - ax, by - ay
    l2 = ex * ex + ey * ey
    dx = px - ax
    dy = py - ay
    if l2 > 0.0:
        u = dx * ex
        u += dy * ey
        u /= l2
        np.clip(u, 0.0, 1.0, out=u)
        dx -= u * ex
        dy -= u * ey
    dx *= dx
    dy *= dy
    dx += dy
    return dx


def _flat(px, py):
    px, py = np.broadcast_arrays(np.asarray(px, dtype=float), np.asarray(py, dtype=float))
    return px.ravel(), py.ravel(), px.shape


def segment_distance(px, py, ax: float, ay: float, bx: float, by: float):
    """Distance from points to the segment a-b (elementwise)."""
    px, py, shape = _flat(px, py)
    return np.sqrt(_segment_dist2(px, py, ax, ay, bx, by)).reshape(shape)


def polygon_distance(px, py, poly: np.ndarray):
    """Distance from points to a CCW convex polygon; 0 inside or on it."""
    px, py, shape = _flat(px, py)
    n = len(poly)
    d2 = None
    inside = None
    for k in range(n):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % n]
        e = _segment_dist2(px, py, ax, ay, bx, by)
        d2 = e if d2 is None else np.minimum(d2, e, out=d2)
        left = (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
        inside = left if inside is None else np.logical_and(inside, left, out=inside)
    out = np.sqrt(d2, out=d2)
    out[inside] = 0.0
    return out.reshape(shape)


def polyline_distance(px, py, pts: np.ndarray):
    px, py, shape = _flat(px, py)
    d2 = None
    for k in range(len(pts) - 1):
        e = _segment_dist2(px, py, pts[k, 0], pts[k, 1], pts[k + 1, 0], pts[k + 1, 1])
        d2 = e if d2 is None else np.minimum(d2, e, out=d2)
    return np.sqrt(d2).reshape(shape)


def convex_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons (touching counts)."""
    for poly in (a, b):
        n = len(poly)
        for k in range(n):
            ex, ey = poly[(k + 1) % n] - poly[k]
            nx, ny = -ey, ex
            pa = a[:, 0] * nx + a[:, 1] * ny
            pb = b[:, 0] * nx + b[:, 1] * ny
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


@dataclass(frozen=True)
class Polyline:
    """A world-frame polyline with a cumulative arc-length table."""

    points: np.ndarray
    s: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "s", np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def _segment(self, s: float) -> int:
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        return min(max(i, 0), len(self.points) - 2)

    def heading_at(self, s: float) -> float:
        i = self._segment(s)
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[1], d[0])

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length s; extrapolates linearly past either end."""
        i = self._segment(s)
        a, b = self.points[i], self.points[i + 1]
        seg = self.s[i + 1] - self.s[i]
        u = (s - self.s[i]) / seg if seg > 0 else 0.0
        return a + u * (b - a)

    def offset_point(self, s: float, lateral: float) -> Pose2:
        """Pose at arc length s shifted `lateral` meters to the left."""
        h = self.heading_at(s)
        p = self.point_at(s)
        return Pose2(p[0] - lateral * math.sin(h), p[1] + lateral * math.cos(h), h)

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Return (arc length, signed lateral offset, left positive) of the closest point."""
        a = self.points[:-1]
        e = np.diff(self.points, axis=0)
        l2 = np.einsum("ij,ij->i", e, e)
        d = np.array([x, y]) - a
        u = np.clip(np.einsum("ij,ij->i", d, e) / np.where(l2 > 0, l2, 1.0), 0.0, 1.0)
        q = d - u[:, None] * e
        dist = np.hypot(q[:, 0], q[:, 1])
        k = int(np.argmin(dist))
        seg_len = math.sqrt(l2[k])
        cross = e[k, 0] * d[k, 1] - e[k, 1] * d[k, 0]
        lateral = cross / seg_len if seg_len > 0 else 0.0
        # beyond the ends the signed offset is measured off the extended segment
        s = self.s[k] + u[k] * seg_len
        if k == 0 and u[k] == 0.0 or k == len(l2) - 1 and u[k] == 1.0:
            along = (d[k, 0] * e[k, 0] + d[k, 1] * e[k, 1]) / seg_len
            s = self.s[k] + along
        return float(s), float(lateral)

    def distance(self, x: float, y: float) -> float:
        return float(polyline_distance(x, y, self.points))
