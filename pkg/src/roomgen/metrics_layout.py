"""Layout quality: inventory coverage, navigability (A* on an inflated grid), overlap and clearance."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import geometry as geo
from . import vocab
from .room import Entity, RoomEnvelope, door_clearance_rect, door_point, entity_rect

AREA_EPS = 1e-9
SQRT2 = math.sqrt(2.0)


class MetricError(ValueError):
    pass


# -- coverage -------------------------------------------------------------------

@dataclass(frozen=True)
class ItemSpec:
    required: int
    cap: int
    weight: float = 1.0


@dataclass(frozen=True)
class GroupSpec:
    alternatives: Mapping[str, int]  # category -> required count
    weight: float = 1.0


@dataclass(frozen=True)
class InventorySpec:
    items: Mapping[str, ItemSpec]
    groups: tuple[GroupSpec, ...] = ()
    gamma_extra: float = 0.05
    gamma_over: float = 0.5

    def __post_init__(self):
        for name, it in self.items.items():
            if it.required < 1 or it.cap < it.required:
                raise MetricError(f"item {name}: need 1 <= required <= cap")
            if it.weight < 0:
                raise MetricError(f"item {name}: negative weight")
        for g in self.groups:
            if g.weight < 0 or not g.alternatives or min(g.alternatives.values()) < 1:
                raise MetricError("groups need non-negative weight and positive alternative counts")
        if self.total_weight <= 0:
            raise MetricError("inventory weights sum to zero")
        if self.gamma_extra < 0 or self.gamma_over < 0:
            raise MetricError("penalty rates must be non-negative")

    @property
    def total_weight(self) -> float:
        return sum(it.weight for it in self.items.values()) + sum(g.weight for g in self.groups)

    @property
    def known_categories(self) -> set[str]:
        known = set(self.items)
        for g in self.groups:
            known.update(g.alternatives)
        return known


def _category_counts(layout: Iterable) -> dict[str, int]:
    counts: dict[str, int] = {}
    for e in layout:
        name = e if isinstance(e, str) else vocab.CATEGORY_NAMES[e.category]
        counts[name] = counts.get(name, 0) + 1
    return counts


def item_score(n: int, it: ItemSpec, gamma_over: float) -> float:
    s = min(n, it.required) / it.required - gamma_over * max(0, n - it.cap) / it.required
    return min(max(s, 0.0), 1.0)


def group_score(counts: Mapping[str, int], g: GroupSpec) -> float:
    return max(min(counts.get(c, 0), req) / req for c, req in g.alternatives.items())


def coverage(layout: Iterable, spec: InventorySpec) -> float:
    """Weighted item and group satisfaction minus a per-extra-category penalty, clamped to [0, 1].

    ``layout`` holds entities or category names.
    """
    counts = _category_counts(layout)
    num = sum(it.weight * item_score(counts.get(c, 0), it, spec.gamma_over) for c, it in spec.items.items())
    num += sum(g.weight * group_score(counts, g) for g in spec.groups)
    n_extra = len(set(counts) - spec.known_categories)
    score = (num - spec.gamma_extra * n_extra) / spec.total_weight
    return min(max(score, 0.0), 1.0)


# -- navigability -----------------------------------------------------------------

@dataclass(frozen=True)
class NavConfig:
    resolution: float = 0.05
    clearance: float = 0.25
    lam: float = 0.25
    target_categories: Optional[tuple[str, ...]] = None  # None: every placed entity

    def __post_init__(self):
        if self.resolution <= 0:
            raise MetricError("resolution must be positive")
        if self.clearance < 0 or self.lam < 0:
            raise MetricError("clearance and lam must be non-negative")


@dataclass(frozen=True)
class NavResult:
    sr: float
    df: float
    nav: float
    n_pairs: int
    n_reachable: int


_MOVES = ((0, 1, 1.0), (0, -1, 1.0), (1, 0, 1.0), (-1, 0, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


def astar(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int], resolution: float = 1.0) -> float:
    """Shortest 8-connected path length between cell centers; inf if unreachable.

    Diagonal steps may not cut a blocked corner. The octile heuristic is consistent,
    so the first time the goal is popped its cost is optimal.
    """
    rows, cols = blocked.shape
    if blocked[start] or blocked[goal]:
        return math.inf
    if start == goal:
        return 0.0
    free = ~blocked
    gr, gc = goal
    k = SQRT2 - 1.0

    def h(r, c):
        dr, dc = abs(r - gr), abs(c - gc)
        return max(dr, dc) + k * min(dr, dc)

    best = {start: 0.0}
    heap = [(h(*start), 0.0, start)]
    closed = set()
    while heap:
        _, g, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal:
            return g * resolution
        closed.add(cell)
        r, c = cell
        for dr, dc, cost in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < rows and 0 <= nc < cols) or not free[nr, nc]:
                continue
            if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
                continue
            ng = g + cost
            nxt = (nr, nc)
            if ng < best.get(nxt, math.inf) - 1e-12:
                best[nxt] = ng
                heapq.heappush(heap, (ng + h(nr, nc), ng, nxt))
    return math.inf


def door_starts(env: RoomEnvelope, offset: float) -> list[tuple[float, float]]:
    if not env.doors:
        raise MetricError("navigability needs at least one door")
    out = []
    for d in env.doors:
        (px, py), (nx, ny), _ = door_point(env, d)
        out.append((px + offset * nx, py + offset * ny))
    return out


def entity_targets(poly: geo.Polygon, layout: Sequence[Entity], offset: float,
                   categories: Optional[Sequence[str]] = None) -> list[tuple[float, float]]:
    """Front-center of each entity footprint, pushed ``offset`` further along its front normal."""
    out = []
    for e in layout:
        if categories is not None and vocab.CATEGORY_NAMES[e.category] not in categories:
            continue
        r = entity_rect(poly, e)
        _, v = r.axes()
        reach = 0.5 * r.depth + offset
        out.append((r.center[0] + reach * v[0], r.center[1] + reach * v[1]))
    return out


def _segment_inside(poly: geo.Polygon, a, b, step: float) -> bool:
    n = max(int(math.ceil(math.hypot(b[0] - a[0], b[1] - a[1]) / step)), 1)
    s = np.linspace(0.0, 1.0, n + 1)
    px = a[0] + s * (b[0] - a[0])
    py = a[1] + s * (b[1] - a[1])
    return bool(geo.points_in_polygon(px, py, poly.array).all())


def navigability_pairs(env: RoomEnvelope, obstacles: Sequence[geo.OrientedRect],
                       targets: Sequence[tuple[float, float]], cfg: NavConfig = NavConfig(),
                       reach_only: bool = False) -> NavResult:
    """Score door-to-target reachability with explicit obstacles and targets."""
    poly = env.polygon()
    starts = door_starts(env, cfg.clearance + cfg.resolution)
    pairs = [(s, t) for s in starts for t in targets]
    if not pairs:
        return NavResult(1.0, 1.0, 100.0 * (1.0 - cfg.lam), 0, 0)
    grid = geo.rasterize(poly, obstacles, cfg.resolution, cfg.clearance)
    labels, _ = ndimage.label(~grid.cells)
    empty = None
    ratios = []
    reachable = 0
    for s, t in pairs:
        cs, ct = grid.cell_of(s), grid.cell_of(t)
        if labels[cs] == 0 or labels[cs] != labels[ct]:
            continue
        reachable += 1
        if reach_only:
            continue
        length = astar(grid.cells, cs, ct, cfg.resolution)
        a, b = grid.cell_center(*cs), grid.cell_center(*ct)
        if _segment_inside(poly, a, b, 0.5 * cfg.resolution):
            straight = math.hypot(b[0] - a[0], b[1] - a[1])
        else:
            if empty is None:
                empty = geo.rasterize(poly, (), cfg.resolution, 0.0)
            straight = astar(empty.cells, cs, ct, cfg.resolution)
        ratios.append(1.0 if straight <= 0.0 else length / straight)
    sr = reachable / len(pairs)
    df = float(np.mean(ratios)) if ratios else 1.0
    return NavResult(sr, df, 100.0 * (sr - cfg.lam * df), len(pairs), reachable)


def navigability(env: RoomEnvelope, layout: Sequence[Entity], cfg: NavConfig = NavConfig(),
                 reach_only: bool = False) -> NavResult:
    """SR, DF and Nav for every door-to-entity-front pair; entities are obstacles."""
    poly = env.polygon()
    if not env.doors:
        raise MetricError("navigability needs at least one door")
    obstacles = [entity_rect(poly, e) for e in layout]
    targets = entity_targets(poly, layout, cfg.clearance + cfg.resolution, cfg.target_categories)
    return navigability_pairs(env, obstacles, targets, cfg, reach_only)


# -- overlap & clearance ----------------------------------------------------------------

@dataclass(frozen=True)
class OCWeights:
    eof: float = 0.25
    goa: float = 0.25
    dci: float = 0.25
    wbv: float = 0.25
    door_depth: float = 0.9

    def __post_init__(self):
        if min(self.eof, self.goa, self.dci, self.wbv) < 0 or self.door_depth <= 0:
            raise MetricError("weights must be non-negative and the door depth positive")


@dataclass(frozen=True)
class OCResult:
    eof: float
    goa: float
    dci: float
    wbv: float
    oc: float  # percent


def overlap_clearance(env: RoomEnvelope, layout: Sequence[Entity], w: OCWeights = OCWeights()) -> OCResult:
    poly = env.polygon()
    rects = [entity_rect(poly, e) for e in layout]
    n = len(rects)
    hit = [False] * n
    pair_area = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            a = geo.rect_intersection_area(rects[i], rects[j])
            if a > AREA_EPS:
                hit[i] = hit[j] = True
                pair_area += a
    eof = sum(hit) / n if n else 0.0
    goa = min(pair_area / geo.polygon_area(poly), 1.0)
    clear = [door_clearance_rect(env, d, w.door_depth) for d in env.doors]
    clear_total = sum(c.area for c in clear)
    intrusion = sum(geo.rect_intersection_area(c, r) for c in clear for r in rects)
    dci = min(intrusion / clear_total, 1.0) if clear_total > 0 else 0.0
    ent_total = sum(r.area for r in rects)
    outside = sum(geo.rect_outside_polygon_area(r, poly) for r in rects)
    wbv = min(outside / ent_total, 1.0) if ent_total > 0 else 0.0
    oc = 100.0 * (w.eof * eof + w.goa * goa + w.dci * dci + w.wbv * wbv)
    return OCResult(eof, goa, dci, wbv, oc)


# -- baseline and batch scoring -------------------------------------------------------------

def random_layout(env: RoomEnvelope, n: int, rng: np.random.Generator) -> list[Entity]:
    """``n`` entities with uniformly random categories and placements.

    Casework hugs a random wall; props get a uniform center inside the room and a
    uniform rotation.
    """
    poly = env.polygon()
    xmin, ymin, xmax, ymax = poly.bbox()
    out = []
    for _ in range(n):
        cat = int(rng.integers(len(vocab.ENTITY_CATEGORIES)))
        info = vocab.ENTITY_CATEGORIES[cat]
        width = float(rng.uniform(*info.width))
        depth = float(rng.uniform(*info.depth))
        if info.kind == vocab.CASEWORK:
            j = int(rng.integers(env.n_edges))
            out.append(Entity(info.kind, cat, j, float(rng.uniform()), 0.5 * depth, width, depth))
            continue
        ent = None
        while ent is None:
            p = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
            if not geo.points_in_polygon(p[:1], p[1:], poly.array)[0]:
                continue
            rect = geo.OrientedRect(geo.Point2(*p), width, depth, float(rng.uniform(-math.pi, math.pi)))
            # anchor to the first wall whose span covers the projected center
            for j in range(env.n_edges):
                t, delta, rho = geo.wall_frame_from_rect(poly, j, rect)
                if 0.0 <= t <= 1.0:
                    ent = Entity(info.kind, cat, j, t, delta, width, depth, rho)
                    break
        out.append(ent)
    return out


@dataclass
class LayoutScore:
    coverage: float
    sr: float
    df: float
    nav: float
    eof: float
    goa: float
    dci: float
    wbv: float
    oc: float
    n_entities: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def score_layout(env: RoomEnvelope, layout: Sequence[Entity], spec: InventorySpec,
                 nav_cfg: NavConfig = NavConfig(), oc_w: OCWeights = OCWeights()) -> LayoutScore:
    nav = navigability(env, layout, nav_cfg)
    oc = overlap_clearance(env, layout, oc_w)
    return LayoutScore(coverage(layout, spec), nav.sr, nav.df, nav.nav, oc.eof, oc.goa, oc.dci, oc.wbv, oc.oc,
                       len(layout))


SUMMARY_FIELDS = ("coverage", "nav", "sr", "df", "oc", "eof", "goa", "dci", "wbv")


def summarize(scores: Sequence[LayoutScore], latencies: Optional[Sequence[float]] = None) -> dict:
    """Mean and population std per column."""
    out = {}
    for f in SUMMARY_FIELDS:
        vals = np.array([getattr(s, f) for s in scores], dtype=float)
        out[f] = {"mean": float(vals.mean()) if len(vals) else math.nan,
                  "std": float(vals.std()) if len(vals) else math.nan}
    if latencies is not None and len(latencies):
        lat = np.asarray(latencies, dtype=float)
        out["latency"] = {"mean": float(lat.mean()), "std": float(lat.std())}
    out["n_rooms"] = len(scores)
    return out
