"""Exact 2D geometry: polygons, wall-referenced frames, rectangle clipping, occupancy grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

EPS = 1e-9


class GeometryError(ValueError):
    pass


class Point2(NamedTuple):
    x: float
    y: float


def normalize_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def signed_area(points) -> float:
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) <= EPS else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - EPS <= c[0] <= max(a[0], b[0]) + EPS
            and min(a[1], b[1]) - EPS <= c[1] <= max(a[1], b[1]) + EPS
        )

    return (
        (o1 == 0 and on_seg(p1, p2, q1))
        or (o2 == 0 and on_seg(p1, p2, q2))
        or (o3 == 0 and on_seg(q1, q2, p1))
        or (o4 == 0 and on_seg(q1, q2, p2))
    )


def is_simple(points) -> bool:
    pts = [tuple(p) for p in points]
    n = len(pts)
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, always stored counter-clockwise."""

    vertices: tuple[Point2, ...]

    def __post_init__(self):
        verts = tuple(Point2(float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise GeometryError(f"polygon needs >= 3 vertices, got {len(verts)}")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise GeometryError("polygon has non-finite coordinates")
        area = signed_area(verts)
        if abs(area) <= EPS:
            raise GeometryError("degenerate polygon (zero area)")
        if area < 0:
            verts = (verts[0],) + tuple(reversed(verts[1:]))
        object.__setattr__(self, "vertices", verts)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def __len__(self) -> int:
        return len(self.vertices)

    def edge(self, j: int) -> tuple[Point2, Point2]:
        n = len(self.vertices)
        if not 0 <= j < n:
            raise GeometryError(f"edge index {j} out of range [0, {n})")
        return self.vertices[j], self.vertices[(j + 1) % n]

    def bbox(self) -> tuple[float, float, float, float]:
        a = self.array
        return float(a[:, 0].min()), float(a[:, 1].min()), float(a[:, 0].max()), float(a[:, 1].max())


def polygon_area(p: Polygon) -> float:
    return signed_area(p.vertices)


def polygon_perimeter(p: Polygon) -> float:
    a = p.array
    return float(np.sum(np.hypot(*(np.roll(a, -1, axis=0) - a).T)))


def compactness(p: Polygon) -> float:
    """Isoperimetric ratio 4*pi*A / P**2 (1 for a circle)."""
    per = polygon_perimeter(p)
    return 4.0 * math.pi * polygon_area(p) / (per * per)


@dataclass(frozen=True)
class OrientedRect:
    center: Point2
    width: float
    depth: float
    angle: float = 0.0

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise GeometryError(f"rect needs positive size, got {self.width}x{self.depth}")
        object.__setattr__(self, "center", Point2(float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "angle", normalize_angle(float(self.angle)))

    @property
    def area(self) -> float:
        return self.width * self.depth

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit vectors along width and along depth (depth axis is the left normal)."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([c, s]), np.array([-s, c])

    def corners(self) -> np.ndarray:
        """Corners in counter-clockwise order."""
        u, v = self.axes()
        hw, hd = 0.5 * self.width, 0.5 * self.depth
        c = np.asarray(self.center)
        return np.array([c - hw * u - hd * v, c + hw * u - hd * v, c + hw * u + hd * v, c - hw * u + hd * v])


def _edge_frame(room: Polygon, edge_index: int):
    x1, x2 = room.edge(edge_index)
    d = np.array([x2[0] - x1[0], x2[1] - x1[1]])
    length = float(np.hypot(*d))
    if length <= EPS:
        raise GeometryError(f"edge {edge_index} has zero length")
    u = d / length
    n = np.array([-u[1], u[0]])  # left normal points into a CCW room
    return np.asarray(x1, dtype=float), u, n, length


def rect_from_wall_frame(room: Polygon, edge_index: int, t: float, delta: float,
                         width: float, depth: float, rho: float) -> OrientedRect:
    x1, u, n, length = _edge_frame(room, edge_index)
    center = x1 + t * length * u + delta * n
    return OrientedRect(Point2(*center), width, depth, math.atan2(u[1], u[0]) + rho)


def wall_frame_from_rect(room: Polygon, edge_index: int, r: OrientedRect) -> tuple[float, float, float]:
    x1, u, n, length = _edge_frame(room, edge_index)
    rel = np.asarray(r.center) - x1
    t = float(np.dot(rel, u)) / length
    delta = float(np.dot(rel, n))
    rho = normalize_angle(r.angle - math.atan2(u[1], u[0]))
    return t, delta, rho


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip any polygon against a convex CCW clipper.

    The result may contain zero-width slivers when the subject is concave, which
    contribute nothing to the area.
    """
    out = [tuple(p) for p in subject]
    m = len(clipper)
    for i in range(m):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        prev = inp[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inp:
            side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if side >= 0:
                if prev_side < 0:
                    out.append(_cut(prev, cur, prev_side, side))
                out.append(cur)
            elif prev_side >= 0:
                out.append(_cut(prev, cur, prev_side, side))
            prev, prev_side = cur, side
    return np.asarray(out, dtype=float).reshape(-1, 2)


def _cut(p, q, sp, sq):
    a = sp / (sp - sq)
    return (p[0] + a * (q[0] - p[0]), p[1] + a * (q[1] - p[1]))


def _area(pts: np.ndarray) -> float:
    if len(pts) < 3:
        return 0.0
    return abs(signed_area(pts))


def rect_intersection_area(a: OrientedRect, b: OrientedRect) -> float:
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.width, a.depth)
    rb = 0.5 * math.hypot(b.width, b.depth)
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    return min(_area(clip_convex(a.corners(), b.corners())), a.area, b.area)


def rect_inside_polygon_area(r: OrientedRect, room: Polygon) -> float:
    # The rectangle is the convex clipper, so the room may be concave.
    return min(_area(clip_convex(room.array, r.corners())), r.area)


def rect_outside_polygon_area(r: OrientedRect, room: Polygon) -> float:
    return max(r.area - rect_inside_polygon_area(r, room), 0.0)


@dataclass(frozen=True)
class OccupancyGrid:
    origin: Point2
    resolution: float
    cells: np.ndarray  # (rows, cols) bool, True = blocked; rows follow y

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def cell_center(self, row: int, col: int) -> Point2:
        return Point2(self.origin[0] + (col + 0.5) * self.resolution,
                      self.origin[1] + (row + 0.5) * self.resolution)

    def cell_of(self, p) -> tuple[int, int]:
        col = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        row = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        rows, cols = self.cells.shape
        return min(max(row, 0), rows - 1), min(max(col, 0), cols - 1)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.cells.shape
        xs = self.origin[0] + (np.arange(cols) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(rows) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray casting, vectorized over query points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def distance_to_segment(px: np.ndarray, py: np.ndarray, a, b) -> np.ndarray:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    ll = dx * dx + dy * dy
    s = np.clip(((px - ax) * dx + (py - ay) * dy) / ll, 0.0, 1.0)
    return np.hypot(px - (ax + s * dx), py - (ay + s * dy))


def distance_to_rect(px: np.ndarray, py: np.ndarray, r: OrientedRect) -> np.ndarray:
    """Euclidean distance to the filled rectangle (0 inside)."""
    u, v = r.axes()
    rx, ry = px - r.center[0], py - r.center[1]
    lu = np.abs(rx * u[0] + ry * u[1]) - 0.5 * r.width
    lv = np.abs(rx * v[0] + ry * v[1]) - 0.5 * r.depth
    return np.hypot(np.maximum(lu, 0.0), np.maximum(lv, 0.0))


def rasterize(room: Polygon, obstacles: Sequence[OrientedRect], resolution: float,
              inflation: float) -> OccupancyGrid:
    """Blocked iff the cell center is outside the room, inside an obstacle, or closer
    than ``inflation`` to an obstacle or wall."""
    if resolution <= 0:
        raise GeometryError("resolution must be positive")
    if inflation < 0:
        raise GeometryError("inflation must be non-negative")
    xmin, ymin, xmax, ymax = room.bbox()
    if xmax - xmin <= EPS or ymax - ymin <= EPS:
        raise GeometryError("degenerate room bounding box")
    cols = int(math.ceil((xmax - xmin) / resolution - 1e-9)) + 2
    rows = int(math.ceil((ymax - ymin) / resolution - 1e-9)) + 2
    grid = OccupancyGrid(Point2(xmin - resolution, ymin - resolution), resolution,
                         np.zeros((rows, cols), dtype=bool))
    px, py = grid.centers()
    poly = room.array
    blocked = ~points_in_polygon(px, py, poly)
    if inflation > 0:
        for i in range(len(poly)):
            blocked |= distance_to_segment(px, py, poly[i], poly[(i + 1) % len(poly)]) < inflation
    for r in obstacles:
        d = distance_to_rect(px, py, r)
        blocked |= (d <= 0.0) | (d < inflation)
    grid.cells[:] = blocked
    return grid
