"""Room domain objects: envelope (walls, openings, layout scalars) and contents (entities)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from . import geometry as geo
from . import vocab

SCALAR_TOL = 1e-6


@dataclass(frozen=True)
class Wall:
    x1: geo.Point2
    x2: geo.Point2
    thickness_in: float = 0.1
    thickness_out: float = 0.1
    condition: int = 0
    edge_id: int = 0

    @property
    def length(self) -> float:
        return math.hypot(self.x2[0] - self.x1[0], self.x2[1] - self.x1[1])


@dataclass(frozen=True)
class Opening:
    kind: str  # "door" | "window"
    edge_index: int
    t: float
    width: float
    family: int = 0
    swing: Optional[int] = None  # doors only


@dataclass(frozen=True)
class Entity:
    kind: str  # vocab.PROP | vocab.CASEWORK
    category: int
    edge_index: int
    t: float
    delta: float
    width: float
    depth: float
    rho: float = 0.0
    extra: int = 0


@dataclass(frozen=True)
class LayoutScalars:
    area: float
    perimeter: float
    n_edges: int
    aspect_ratio: float
    compactness: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.area, self.perimeter, float(self.n_edges), self.aspect_ratio, self.compactness)


@dataclass(frozen=True)
class RoomEnvelope:
    room_type: int
    walls: tuple[Wall, ...]
    doors: tuple[Opening, ...] = ()
    windows: tuple[Opening, ...] = ()
    layout_scalars: Optional[LayoutScalars] = None

    def polygon(self) -> geo.Polygon:
        return geo.Polygon(tuple(w.x1 for w in self.walls))

    @property
    def n_edges(self) -> int:
        return len(self.walls)


@dataclass(frozen=True)
class Room:
    envelope: RoomEnvelope
    entities: tuple[Entity, ...] = ()


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


@dataclass(frozen=True)
class NormalizationRecord:
    translation: tuple[float, float]
    scale: float


def walls_from_points(points, *, thickness_in: float = 0.1, thickness_out: float = 0.1,
                      condition: int = 0) -> tuple[Wall, ...]:
    pts = [geo.Point2(float(x), float(y)) for x, y in points]
    n = len(pts)
    return tuple(Wall(pts[i], pts[(i + 1) % n], thickness_in, thickness_out, condition, i) for i in range(n))


def derive_layout_scalars(env: RoomEnvelope) -> LayoutScalars:
    poly = geo.Polygon(tuple(w.x1 for w in env.walls))
    xmin, ymin, xmax, ymax = poly.bbox()
    long_side, short_side = max(xmax - xmin, ymax - ymin), min(xmax - xmin, ymax - ymin)
    return LayoutScalars(
        area=geo.polygon_area(poly),
        perimeter=geo.polygon_perimeter(poly),
        n_edges=len(env.walls),
        aspect_ratio=long_side / short_side,
        compactness=geo.compactness(poly),
    )


def make_envelope(room_type: int, walls, doors=(), windows=()) -> RoomEnvelope:
    env = RoomEnvelope(room_type, tuple(walls), tuple(doors), tuple(windows))
    return replace(env, layout_scalars=derive_layout_scalars(env))


def canonical_order(entities) -> tuple[Entity, ...]:
    """Casework before props, each sorted by (edge_index, t)."""
    return tuple(sorted(entities, key=lambda e: (0 if e.kind == vocab.CASEWORK else 1, e.edge_index, e.t)))


def _finite(*xs) -> bool:
    return all(math.isfinite(x) for x in xs)


def _validate_opening(o: Opening, name: str, walls, out: list[Violation]) -> None:
    n = len(walls)
    if not 0 <= o.edge_index < n:
        out.append(Violation(f"{name}.edge_index", f"{o.edge_index} not in [0, {n})"))
        return
    if not (_finite(o.t) and 0.0 <= o.t <= 1.0):
        out.append(Violation(f"{name}.t", f"{o.t} out of [0,1]"))
    if not (_finite(o.width) and o.width > 0):
        out.append(Violation(f"{name}.width", "must be positive"))
        return
    length = walls[o.edge_index].length
    if _finite(o.t) and 0.0 <= o.t <= 1.0:
        lo, hi = o.t * length - o.width / 2, o.t * length + o.width / 2
        if lo < -geo.EPS or hi > length + geo.EPS:
            out.append(Violation(f"{name}.span", "opening span exceeds edge length"))


def validate_room(r: Room) -> list[Violation]:
    out: list[Violation] = []
    env = r.envelope
    if not 0 <= env.room_type < len(vocab.ROOM_TYPES):
        out.append(Violation("envelope.room_type", f"unknown room type id {env.room_type}"))
    walls = env.walls
    if len(walls) < 3:
        out.append(Violation("envelope.walls", "need at least 3 walls"))
        return out
    if len(walls) > vocab.MAX_EDGES:
        out.append(Violation("envelope.walls", f"more than {vocab.MAX_EDGES} walls"))
    geometry_ok = True
    for j, w in enumerate(walls):
        if not _finite(*w.x1, *w.x2, w.thickness_in, w.thickness_out):
            out.append(Violation(f"walls[{j}]", "non-finite value"))
            geometry_ok = False
            continue
        if w.length <= geo.EPS:
            out.append(Violation(f"walls[{j}]", "zero-length wall"))
            geometry_ok = False
        if w.thickness_in < 0 or w.thickness_out < 0:
            out.append(Violation(f"walls[{j}].thickness", "must be non-negative"))
        if not 0 <= w.condition < len(vocab.WALL_CONDITIONS):
            out.append(Violation(f"walls[{j}].condition", f"unknown condition id {w.condition}"))
        nxt = walls[(j + 1) % len(walls)]
        if math.hypot(w.x2[0] - nxt.x1[0], w.x2[1] - nxt.x1[1]) > geo.EPS:
            out.append(Violation(f"walls[{j}]", "loop not closed (x2 != next x1)"))
            geometry_ok = False
    if geometry_ok:
        pts = [w.x1 for w in walls]
        area = geo.signed_area(pts)
        if area <= geo.EPS:
            out.append(Violation("envelope.walls", "orientation must be counter-clockwise"))
        elif not geo.is_simple(pts):
            out.append(Violation("envelope.walls", "polygon is self-intersecting"))
        elif env.layout_scalars is not None:
            want = derive_layout_scalars(env)
            for name, a, b in zip(("area", "perimeter", "n_edges", "aspect_ratio", "compactness"),
                                  env.layout_scalars.as_tuple(), want.as_tuple()):
                if not abs(a - b) <= SCALAR_TOL:
                    out.append(Violation(f"layout_scalars.{name}", f"{a} inconsistent with walls ({b})"))
    for k, d in enumerate(env.doors):
        if d.kind != "door":
            out.append(Violation(f"doors[{k}].kind", f"expected door, got {d.kind}"))
        if not 0 <= d.family < len(vocab.DOOR_FAMILIES):
            out.append(Violation(f"doors[{k}].family", f"unknown family id {d.family}"))
        if d.swing is None or not 0 <= d.swing < len(vocab.DOOR_SWINGS):
            out.append(Violation(f"doors[{k}].swing", "doors need a valid swing"))
        _validate_opening(d, f"doors[{k}]", walls, out)
    for k, w in enumerate(env.windows):
        if w.kind != "window":
            out.append(Violation(f"windows[{k}].kind", f"expected window, got {w.kind}"))
        if not 0 <= w.family < len(vocab.WINDOW_FAMILIES):
            out.append(Violation(f"windows[{k}].family", f"unknown family id {w.family}"))
        if w.swing is not None:
            out.append(Violation(f"windows[{k}].swing", "windows carry no swing"))
        _validate_opening(w, f"windows[{k}]", walls, out)
    out.extend(validate_entities(r.entities, len(walls)))
    return out


def validate_entities(entities, n_edges: int) -> list[Violation]:
    out: list[Violation] = []
    for i, e in enumerate(entities):
        name = f"entities[{i}]"
        if e.kind not in (vocab.PROP, vocab.CASEWORK):
            out.append(Violation(f"{name}.kind", f"unknown kind {e.kind}"))
        if not 0 <= e.category < len(vocab.ENTITY_CATEGORIES):
            out.append(Violation(f"{name}.category", f"unknown category id {e.category}"))
        elif vocab.CATEGORY_KIND[e.category] != e.kind:
            out.append(Violation(f"{name}.category", "category does not match kind"))
        if not 0 <= e.edge_index < n_edges:
            out.append(Violation(f"{name}.edge_index", f"{e.edge_index} not in [0, {n_edges})"))
        if not (_finite(e.t) and 0.0 <= e.t <= 1.0):
            out.append(Violation(f"{name}.t", f"{e.t} out of [0,1]"))
        if not (_finite(e.width, e.depth) and e.width > 0 and e.depth > 0):
            out.append(Violation(f"{name}.size", "width and depth must be positive"))
        if not _finite(e.delta, e.rho):
            out.append(Violation(f"{name}", "non-finite delta or rho"))
        if e.kind == vocab.CASEWORK and e.rho != 0.0:
            out.append(Violation(f"{name}.rho", "casework carries no rotation"))
        if not 0 <= e.extra < len(vocab.ENTITY_EXTRAS):
            out.append(Violation(f"{name}.extra", f"unknown extra id {e.extra}"))
    return out


def _transform_room(r: Room, translation, scale: float) -> Room:
    tx, ty = translation

    def pt(p):
        return geo.Point2((p[0] + tx) * scale, (p[1] + ty) * scale)

    env = r.envelope
    walls = tuple(replace(w, x1=pt(w.x1), x2=pt(w.x2), thickness_in=w.thickness_in * scale,
                          thickness_out=w.thickness_out * scale) for w in env.walls)
    doors = tuple(replace(d, width=d.width * scale) for d in env.doors)
    windows = tuple(replace(w, width=w.width * scale) for w in env.windows)
    ents = tuple(replace(e, delta=e.delta * scale, width=e.width * scale, depth=e.depth * scale)
                 for e in r.entities)
    new_env = make_envelope(env.room_type, walls, doors, windows)
    return Room(new_env, ents)


def normalize_room(r: Room) -> tuple[Room, NormalizationRecord]:
    """Move the bounding-box minimum to the origin and scale the longest side to 1."""
    xmin, ymin, xmax, ymax = r.envelope.polygon().bbox()
    longest = max(xmax - xmin, ymax - ymin)
    if longest <= geo.EPS:
        raise geo.GeometryError("degenerate bounding box")
    rec = NormalizationRecord((-xmin, -ymin), 1.0 / longest)
    return _transform_room(r, rec.translation, rec.scale), rec


def denormalize_room(r: Room, rec: NormalizationRecord) -> Room:
    tx, ty = rec.translation
    unscaled = _transform_room(r, (0.0, 0.0), 1.0 / rec.scale)
    return _transform_room(unscaled, (-tx, -ty), 1.0)


def denormalize_entities(entities, rec: NormalizationRecord) -> tuple[Entity, ...]:
    s = 1.0 / rec.scale
    return tuple(replace(e, delta=e.delta * s, width=e.width * s, depth=e.depth * s) for e in entities)


def entity_rect(env_poly: geo.Polygon, e: Entity) -> geo.OrientedRect:
    return geo.rect_from_wall_frame(env_poly, e.edge_index, e.t, e.delta, e.width, e.depth, e.rho)


def door_point(env: RoomEnvelope, d: Opening):
    """Point on the wall at the opening center and the interior normal of that wall."""
    w = env.walls[d.edge_index]
    dx, dy = w.x2[0] - w.x1[0], w.x2[1] - w.x1[1]
    length = math.hypot(dx, dy)
    ux, uy = dx / length, dy / length
    return (w.x1[0] + d.t * dx, w.x1[1] + d.t * dy), (-uy, ux), math.atan2(uy, ux)


def door_clearance_rect(env: RoomEnvelope, d: Opening, depth: float) -> geo.OrientedRect:
    """Door width x clearance depth, extruded into the room from the door span."""
    (px, py), (nx, ny), ang = door_point(env, d)
    return geo.OrientedRect(geo.Point2(px + 0.5 * depth * nx, py + 0.5 * depth * ny), d.width, depth, ang)

