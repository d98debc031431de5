"""Room persistence (JSON Lines), the synthetic room generator, and text serialization."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import geometry as geo
from . import vocab
from .metrics_layout import GroupSpec, InventorySpec, ItemSpec, NavConfig, navigability
from .room import (Entity, LayoutScalars, Opening, Room, RoomEnvelope, Wall, canonical_order,
                   door_clearance_rect, entity_rect, make_envelope, validate_room, walls_from_points)

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
MASK64 = (1 << 64) - 1


class DatasetError(ValueError):
    pass


# -- JSON Lines ---------------------------------------------------------------------

@dataclass(frozen=True)
class RoomRecord:
    id: str
    split: str
    seed: int
    room: Room
    schema_version: int = SCHEMA_VERSION


def room_to_json(r: Room) -> dict:
    return asdict(r)


def _point(v) -> geo.Point2:
    x, y = v
    return geo.Point2(float(x), float(y))


def room_from_json(d: Mapping) -> Room:
    env = d["envelope"]
    walls = tuple(Wall(_point(w["x1"]), _point(w["x2"]), float(w["thickness_in"]), float(w["thickness_out"]),
                       int(w["condition"]), int(w["edge_id"])) for w in env["walls"])
    doors = tuple(Opening(**o) for o in env["doors"])
    windows = tuple(Opening(**o) for o in env["windows"])
    ls = env.get("layout_scalars")
    scalars = None if ls is None else LayoutScalars(**ls)
    envelope = RoomEnvelope(int(env["room_type"]), walls, doors, windows, scalars)
    return Room(envelope, tuple(Entity(**e) for e in d["entities"]))


def record_to_line(rec: RoomRecord) -> str:
    obj = {"schema_version": rec.schema_version, "id": rec.id, "split": rec.split, "seed": rec.seed,
           "room": room_to_json(rec.room)}
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def save_records(records: Iterable[RoomRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_line(rec) + "\n")


def save_rooms(rooms: Iterable[Room], path, seed: int = 0) -> None:
    """Save bare rooms; ids, splits and seeds are derived from the position in the list."""
    save_records((RoomRecord(f"room-{i:06d}", split_of(seed, i), seed, r) for i, r in enumerate(rooms)), path)


def load_records(path) -> list[RoomRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            version = obj.get("schema_version") if isinstance(obj, dict) else None
            if version != SCHEMA_VERSION:
                raise DatasetError(f"{path}:{lineno}: unsupported schema_version {version!r}")
            try:
                room = room_from_json(obj["room"])
                rec = RoomRecord(str(obj["id"]), str(obj["split"]), int(obj["seed"]), room, version)
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: invalid room record ({exc})") from exc
            if rec.split not in SPLITS:
                raise DatasetError(f"{path}:{lineno}: unknown split {rec.split!r}")
            bad = validate_room(room)
            if bad:
                raise DatasetError(f"{path}:{lineno}: room fails validation ({bad[0]})")
            out.append(rec)
    return out


def load_rooms(path) -> list[Room]:
    return [r.room for r in load_records(path)]


# -- seeds and splits -----------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def room_seed(master: int, index: int) -> int:
    return splitmix64((splitmix64(master & MASK64) + index) & MASK64)


def split_of(seed: int, index: int) -> str:
    bucket = int(hashlib.sha256(f"{seed}:{index}".encode()).hexdigest(), 16) % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


# -- furniture programs -----------------------------------------------------------------

@dataclass(frozen=True)
class Program:
    """Per-type furniture program: (category, min, max) items and exclusive alternative groups."""

    items: tuple[tuple[str, int, int], ...]
    groups: tuple[tuple[tuple[str, int, int], ...], ...] = ()

    def __post_init__(self):
        for name, lo, hi in self.items + tuple(a for g in self.groups for a in g):
            if name not in vocab.CATEGORY_INDEX:
                raise DatasetError(f"unknown category {name!r} in program")
            if not 0 <= lo <= hi:
                raise DatasetError(f"{name}: need 0 <= min <= max")
        for g in self.groups:
            if any(lo < 1 for _, lo, _ in g):
                raise DatasetError("group alternatives need a positive minimum count")

    @classmethod
    def from_obj(cls, obj: Mapping) -> "Program":
        unknown = set(obj) - {"items", "groups"}
        if unknown:
            raise DatasetError(f"unknown program keys: {sorted(unknown)}")
        items = tuple((str(c), int(lo), int(hi)) for c, lo, hi in obj.get("items", ()))
        groups = tuple(tuple((str(c), int(lo), int(hi)) for c, lo, hi in g) for g in obj.get("groups", ()))
        return cls(items, groups)


DEFAULT_PROGRAMS: dict[str, Program] = {
    "bedroom": Program((("bed", 1, 1), ("nightstand", 1, 2), ("dresser", 0, 1), ("wardrobe", 0, 1),
                        ("desk", 0, 1))),
    "bathroom": Program((("toilet", 1, 1), ("vanity", 1, 1)), ((("bathtub", 1, 1), ("shower", 1, 1)),)),
    "kitchen": Program((("base_cabinet", 2, 4), ("sink_cabinet", 1, 1), ("refrigerator", 1, 1),
                        ("tall_cabinet", 0, 1))),
    "living": Program((("sofa", 1, 1), ("coffee_table", 1, 1), ("armchair", 0, 2), ("tv_stand", 0, 1),
                       ("bookshelf", 0, 1))),
    "dining": Program((("dining_table", 1, 1), ("sideboard", 0, 1), ("bookshelf", 0, 1))),
    "office": Program((("desk", 1, 1), ("office_chair", 1, 1), ("bookshelf", 0, 1), ("armchair", 0, 1))),
    "pantry": Program((("pantry_shelf", 2, 3), ("tall_cabinet", 0, 1))),
    "garage": Program((("workbench", 1, 1), ("storage_rack", 1, 2), ("tall_cabinet", 0, 2))),
}

DEFAULT_SIZES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "bedroom": ((3.4, 4.6), (3.2, 4.2)),
    "bathroom": ((2.4, 3.2), (2.0, 2.8)),
    "kitchen": ((3.2, 4.6), (2.8, 4.0)),
    "living": ((4.2, 6.0), (3.6, 5.0)),
    "dining": ((3.4, 4.6), (3.0, 4.2)),
    "office": ((2.8, 3.8), (2.6, 3.4)),
    "pantry": ((1.8, 2.6), (1.6, 2.2)),
    "garage": ((5.6, 7.0), (5.6, 7.0)),
}


def inventory_for(room_type, programs: Optional[Mapping[str, Program]] = None) -> InventorySpec:
    """Coverage spec matching a program: required items weigh 1, optional ones 0."""
    name = vocab.ROOM_TYPES[room_type] if isinstance(room_type, int) else room_type
    prog = (programs or DEFAULT_PROGRAMS)[name]
    items = {}
    for cat, lo, hi in prog.items:
        items[cat] = ItemSpec(required=max(lo, 1), cap=max(hi, 1), weight=1.0 if lo > 0 else 0.0)
    groups = tuple(GroupSpec({c: lo for c, lo, _ in g}) for g in prog.groups)
    return InventorySpec(items, groups)


# -- synthetic generator -----------------------------------------------------------------

@dataclass
class SynthConfig:
    type_weights: dict = field(default_factory=lambda: {t: 1.0 for t in vocab.ROOM_TYPES})
    size_ranges: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    shape_weights: dict = field(default_factory=lambda: {"rect": 0.7, "L": 0.3})
    programs: dict = field(default_factory=lambda: dict(DEFAULT_PROGRAMS))
    seed: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        unknown = set(self.type_weights) - set(vocab.ROOM_TYPES)
        if unknown:
            raise DatasetError(f"unknown room types: {sorted(unknown)}")
        w = list(self.type_weights.values())
        if not w or min(w) < 0 or sum(w) <= 0:
            raise DatasetError("type weights must be non-negative and not all zero")
        if set(self.shape_weights) - {"rect", "L"}:
            raise DatasetError("shape weights accept only 'rect' and 'L'")
        sw = list(self.shape_weights.values())
        if not sw or min(sw) < 0 or sum(sw) <= 0:
            raise DatasetError("shape weights must be non-negative and not all zero")
        self.size_ranges = {**DEFAULT_SIZES, **{k: tuple(tuple(map(float, r)) for r in v)
                                                for k, v in self.size_ranges.items()}}
        for name, ranges in self.size_ranges.items():
            if len(ranges) != 2 or any(len(r) != 2 or not 0 < r[0] <= r[1] for r in ranges):
                raise DatasetError(f"size range for {name}: need 0 < min <= max")
        self.programs = {**DEFAULT_PROGRAMS, **{k: v if isinstance(v, Program) else Program.from_obj(v)
                                                for k, v in self.programs.items()}}
        if self.max_attempts < 1:
            raise DatasetError("max_attempts must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise DatasetError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


DOOR_WIDTHS = {
    "single_swing": (0.8, 0.9),
    "double_swing": (1.4, 1.6),
    "sliding": (0.8, 1.0),
    "pocket": (0.75, 0.9),
    "bifold": (0.9, 1.2),
    "overhead": (2.4, 2.8),
}
INTERIOR_DOORS = ("single_swing", "double_swing", "sliding", "pocket", "bifold")
SWINGING = {"single_swing", "double_swing", "bifold"}
CORNER_MARGIN = 0.15
OPENING_GAP = 0.1
ENTITY_GAP = 0.02
NAV = NavConfig()


def _outline(rng: np.random.Generator, w: float, h: float, shape: str) -> list[tuple[float, float]]:
    if shape == "rect":
        pts = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    else:
        w1 = w * rng.uniform(0.55, 0.75)
        h1 = h * rng.uniform(0.55, 0.75)
        pts = [(0.0, 0.0), (w, 0.0), (w, h1), (w1, h1), (w1, h), (0.0, h)]
    for _ in range(int(rng.integers(4))):  # quarter turns keep coordinates exact
        pts = [(-y, x) for x, y in pts]
    shift = int(rng.integers(len(pts)))
    pts = pts[shift:] + pts[:shift]
    ox, oy = rng.uniform(-5.0, 5.0, size=2)
    return [(x + ox, y + oy) for x, y in pts]


def _place_opening(rng, walls, taken: dict, width: float) -> Optional[tuple[int, float]]:
    for _ in range(50):
        j = int(rng.integers(len(walls)))
        length = walls[j].length
        lo, hi = CORNER_MARGIN + width / 2, length - CORNER_MARGIN - width / 2
        if hi <= lo:
            continue
        c = rng.uniform(lo, hi)
        span = (c - width / 2 - OPENING_GAP, c + width / 2 + OPENING_GAP)
        if any(a < span[1] and span[0] < b for a, b in taken.get(j, [])):
            continue
        taken.setdefault(j, []).append((c - width / 2, c + width / 2))
        return j, c / length
    return None


def _envelope(rng, cfg: SynthConfig, room_type: int) -> Optional[RoomEnvelope]:
    name = vocab.ROOM_TYPES[room_type]
    (wlo, whi), (hlo, hhi) = cfg.size_ranges[name]
    shapes = sorted(cfg.shape_weights)
    sp = np.array([cfg.shape_weights[s] for s in shapes], dtype=float)
    shape = shapes[int(rng.choice(len(shapes), p=sp / sp.sum()))]
    pts = _outline(rng, rng.uniform(wlo, whi), rng.uniform(hlo, hhi), shape)
    walls = walls_from_points(pts, thickness_in=float(rng.uniform(0.08, 0.15)),
                              thickness_out=float(rng.uniform(0.08, 0.2)),
                              condition=int(rng.integers(len(vocab.WALL_CONDITIONS))))
    taken: dict = {}
    n_doors = 2 if name in ("living", "dining", "kitchen") and rng.uniform() < 0.3 else 1
    doors = []
    for k in range(n_doors):
        fam = "overhead" if name == "garage" and k == 0 else INTERIOR_DOORS[int(rng.integers(len(INTERIOR_DOORS)))]
        width = float(rng.uniform(*DOOR_WIDTHS[fam]))
        spot = _place_opening(rng, walls, taken, width)
        if spot is None:
            return None
        swing = int(rng.integers(2)) if fam in SWINGING else vocab.DOOR_SWINGS.index("none")
        doors.append(Opening("door", spot[0], float(spot[1]), width, vocab.DOOR_FAMILIES.index(fam), swing))
    windows = []
    for _ in range(int(rng.integers(3))):
        width = float(rng.uniform(0.6, 1.5))
        spot = _place_opening(rng, walls, taken, width)
        if spot is not None:
            windows.append(Opening("window", spot[0], float(spot[1]), width,
                                   int(rng.integers(len(vocab.WINDOW_FAMILIES)))))
    return make_envelope(room_type, walls, doors, windows)


def _draw_program(rng, prog: Program) -> list[str]:
    cats = []
    for cat, lo, hi in prog.items:
        if lo == 0 and rng.uniform() < 0.5:
            continue
        cats += [cat] * int(rng.integers(max(lo, 1), hi + 1))
    for g in prog.groups:
        cat, lo, hi = g[int(rng.integers(len(g)))]
        cats += [cat] * int(rng.integers(lo, hi + 1))
    return cats


def _footprint_area(cat: str) -> float:
    info = vocab.ENTITY_CATEGORIES[vocab.CATEGORY_INDEX[cat]]
    return info.width[1] * info.depth[1]


def _propose(rng, env: RoomEnvelope, poly: geo.Polygon, cat: str) -> Optional[Entity]:
    cid = vocab.CATEGORY_INDEX[cat]
    info = vocab.ENTITY_CATEGORIES[cid]
    width = float(rng.uniform(*info.width))
    depth = float(rng.uniform(*info.depth))
    rho = float(info.rotations[int(rng.integers(len(info.rotations)))]) if info.kind == vocab.PROP else 0.0
    c, s = abs(math.cos(rho)), abs(math.sin(rho))
    along = 0.5 * (width * c + depth * s)
    normal = 0.5 * (width * s + depth * c)
    j = int(rng.integers(env.n_edges))
    length = env.walls[j].length
    if info.placement == "center":
        t = float(rng.uniform(0.3, 0.7))
        delta = float(rng.uniform(normal + 0.8, normal + 0.8 + 0.5 * length))
    else:
        if length < 2 * along + 2 * ENTITY_GAP:
            return None
        t = float(rng.uniform((along + ENTITY_GAP) / length, 1.0 - (along + ENTITY_GAP) / length))
        gap = 0.0 if info.kind == vocab.CASEWORK else float(rng.uniform(0.02, 0.08))
        delta = normal + gap
    extra = int(rng.integers(1, len(vocab.ENTITY_EXTRAS))) if info.kind == vocab.CASEWORK else 0
    return Entity(info.kind, cid, j, t, delta, width, depth, rho, extra)


def _grown(r: geo.OrientedRect, pad: float) -> geo.OrientedRect:
    return geo.OrientedRect(r.center, r.width + 2 * pad, r.depth + 2 * pad, r.angle)


def _furnish(rng, env: RoomEnvelope, cats: Sequence[str], budget: list) -> Optional[tuple[Entity, ...]]:
    """Rejection-sample every category in turn; ``budget`` is a shared one-element attempt counter."""
    poly = env.polygon()
    keep_clear = [door_clearance_rect(env, d, 0.9) for d in env.doors]
    placed: list[Entity] = []
    rects: list[geo.OrientedRect] = []
    for cat in sorted(cats, key=lambda c: -_footprint_area(c)):
        while True:
            if budget[0] <= 0:
                return None
            budget[0] -= 1
            e = _propose(rng, env, poly, cat)
            if e is None:
                continue
            r = entity_rect(poly, e)
            if geo.rect_outside_polygon_area(r, poly) > geo.EPS:
                continue
            g = _grown(r, ENTITY_GAP)
            if any(geo.rect_intersection_area(g, o) > 0.0 for o in rects):
                continue
            if any(geo.rect_intersection_area(r, k) > 0.0 for k in keep_clear):
                continue
            placed.append(e)
            rects.append(r)
            break
    return tuple(placed)


def synth_room(cfg: SynthConfig, seed: int) -> Room:
    """One room from its own seed; envelopes are redrawn until furnishing succeeds."""
    rng = np.random.default_rng(seed)
    types = sorted(cfg.type_weights, key=vocab.ROOM_TYPES.index)
    tw = np.array([cfg.type_weights[t] for t in types], dtype=float)
    room_type = vocab.room_type_id(types[int(rng.choice(len(types), p=tw / tw.sum()))])
    prog = cfg.programs[vocab.ROOM_TYPES[room_type]]
    while True:
        env = _envelope(rng, cfg, room_type)
        if env is None:
            continue
        budget = [cfg.max_attempts]
        while budget[0] > 0:
            ents = _furnish(rng, env, _draw_program(rng, prog), budget)
            if ents is None:
                break
            if navigability(env, ents, NAV, reach_only=True).sr == 1.0:
                return Room(env, canonical_order(ents))


def synth_records(cfg: SynthConfig, n: int) -> list[RoomRecord]:
    if n < 0:
        raise DatasetError("n must be non-negative")
    out = []
    for i in range(n):
        s = room_seed(cfg.seed, i)
        out.append(RoomRecord(f"room-{i:06d}", split_of(cfg.seed, i), s, synth_room(cfg, s)))
    return out


def synth_generate(cfg: SynthConfig, n: int) -> list[Room]:
    return [r.room for r in synth_records(cfg, n)]


# -- text serialization -------------------------------------------------------------------

def _f(x: float) -> str:
    return f"{x:.4f}"


def serialize_room_text(r: Room) -> str:
    env = r.envelope
    ls = env.layout_scalars
    lines = [f"room type: {vocab.ROOM_TYPES[env.room_type]}"]
    if ls is not None:
        lines.append(f"layout: area={_f(ls.area)} perimeter={_f(ls.perimeter)} edges={ls.n_edges} "
                     f"aspect={_f(ls.aspect_ratio)} compactness={_f(ls.compactness)}")
    lines.append("walls:")
    for j, w in enumerate(env.walls):
        lines.append(f"  wall {j}: ({_f(w.x1[0])}, {_f(w.x1[1])}) to ({_f(w.x2[0])}, {_f(w.x2[1])}) "
                     f"condition={vocab.WALL_CONDITIONS[w.condition]}")
    for label, ops, fams in (("doors", env.doors, vocab.DOOR_FAMILIES), ("windows", env.windows, vocab.WINDOW_FAMILIES)):
        if not ops:
            lines.append(f"{label}: none")
            continue
        lines.append(f"{label}:")
        for o in ops:
            swing = f" swing={vocab.DOOR_SWINGS[o.swing]}" if o.swing is not None else ""
            lines.append(f"  {fams[o.family]} on wall {o.edge_index} at t={_f(o.t)} width={_f(o.width)}{swing}")
    if not r.entities:
        lines.append("entities: none")
    else:
        lines.append("entities:")
        for e in r.entities:
            lines.append(f"  {vocab.CATEGORY_NAMES[e.category]} ({e.kind}) wall {e.edge_index} t={_f(e.t)} "
                         f"offset={_f(e.delta)} size={_f(e.width)}x{_f(e.depth)} rotation={_f(e.rho)} "
                         f"finish={vocab.ENTITY_EXTRAS[e.extra]}")
    return "\n".join(lines) + "\n"
