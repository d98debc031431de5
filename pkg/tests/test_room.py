import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from roomgen import geometry as geo
from roomgen import room as R
from roomgen import vocab
from roomgen.dataset import SynthConfig, synth_generate


def square_room(side=4.0, origin=(0.0, 0.0), doors=None, entities=()):
    ox, oy = origin
    pts = [(ox, oy), (ox + side, oy), (ox + side, oy + side), (ox, oy + side)]
    if doors is None:
        doors = (R.Opening("door", 0, 0.5, 0.9, 0, 0),)
    env = R.make_envelope(vocab.room_type_id("bedroom"), R.walls_from_points(pts), doors)
    return R.Room(env, tuple(entities))


def bed(t=0.5):
    return R.Entity(vocab.PROP, vocab.category_id("bed"), 2, t, 1.0, 1.6, 2.0, 0.0)


def test_layout_scalars_rectangle():
    env = R.make_envelope(0, R.walls_from_points([(0, 0), (4, 0), (4, 2), (0, 2)]))
    s = env.layout_scalars
    assert (s.area, s.perimeter, s.n_edges, s.aspect_ratio) == (8.0, 12.0, 4, 2.0)
    assert s.compactness == pytest.approx(4 * math.pi * 8 / 144)
    assert s.compactness == pytest.approx(0.698, abs=1e-3)


def test_layout_scalars_invariant_under_cyclic_rotation():
    pts = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    base = R.make_envelope(0, R.walls_from_points(pts)).layout_scalars
    for k in range(1, len(pts)):
        rot = R.make_envelope(0, R.walls_from_points(pts[k:] + pts[:k])).layout_scalars
        for a, b in zip(base.as_tuple(), rot.as_tuple()):
            assert a == pytest.approx(b, abs=1e-12)


def test_valid_room_has_no_violations():
    assert R.validate_room(square_room(entities=[bed()])) == []


def test_door_t_out_of_range_reported():
    r = square_room(doors=(R.Opening("door", 0, 1.3, 0.9, 0, 0),))
    fields = [v.field for v in R.validate_room(r)]
    assert "doors[0].t" in fields


def test_clockwise_walls_reported():
    pts = [(0, 0), (0, 4), (4, 4), (4, 0)]
    env = R.RoomEnvelope(0, R.walls_from_points(pts))
    rules = [v.rule for v in R.validate_room(R.Room(env))]
    assert any("counter-clockwise" in r for r in rules)


def test_validation_collects_several_violations():
    bad = R.Entity(vocab.CASEWORK, vocab.category_id("bed"), 9, -0.2, 0.1, -1.0, 0.5, 0.3)
    vs = R.validate_room(square_room(entities=[bad]))
    fields = {v.field for v in vs}
    assert {"entities[0].category", "entities[0].edge_index", "entities[0].t",
            "entities[0].size", "entities[0].rho"} <= fields


def test_inconsistent_layout_scalars_reported():
    r = square_room()
    env = replace(r.envelope, layout_scalars=replace(r.envelope.layout_scalars, area=99.0))
    assert any(v.field == "layout_scalars.area" for v in R.validate_room(R.Room(env)))


def test_opening_span_must_fit_wall():
    r = square_room(doors=(R.Opening("door", 0, 0.05, 0.9, 0, 0),))
    assert any(v.field == "doors[0].span" for v in R.validate_room(r))


def test_normalize_example_and_idempotence():
    r = square_room(origin=(10.0, 10.0), entities=[bed()])
    n, rec = R.normalize_room(r)
    assert rec.scale == pytest.approx(0.25)
    assert rec.translation == pytest.approx((-10.0, -10.0))
    assert n.envelope.polygon().bbox() == pytest.approx((0.0, 0.0, 1.0, 1.0))
    n2, rec2 = R.normalize_room(n)
    assert rec2.scale == pytest.approx(1.0) and rec2.translation == pytest.approx((0.0, 0.0))
    assert n2 == n


def _close_rooms(a: R.Room, b: R.Room, tol: float) -> None:
    for wa, wb in zip(a.envelope.walls, b.envelope.walls):
        assert wa.x1 == pytest.approx(wb.x1, abs=tol)
        assert wa.thickness_in == pytest.approx(wb.thickness_in, abs=tol)
    for ea, eb in zip(a.entities, b.entities):
        for f in ("t", "delta", "width", "depth", "rho"):
            assert getattr(ea, f) == pytest.approx(getattr(eb, f), abs=tol)


def test_normalize_round_trip_on_synthetic_rooms():
    for r in synth_generate(SynthConfig(seed=3), 30):
        n, rec = R.normalize_room(r)
        _close_rooms(R.denormalize_room(n, rec), r, 1e-9)
        ents = R.denormalize_entities(n.entities, rec)
        for ea, eb in zip(ents, r.entities):
            assert ea.width == pytest.approx(eb.width, abs=1e-9)


def test_normalization_preserves_placements_relative_to_walls():
    r = square_room(origin=(3.0, -2.0), entities=[bed(0.3)])
    n, rec = R.normalize_room(r)
    a = R.entity_rect(r.envelope.polygon(), r.entities[0])
    b = R.entity_rect(n.envelope.polygon(), n.entities[0])
    assert (b.center[0] / rec.scale - rec.translation[0]) == pytest.approx(a.center[0])
    assert (b.center[1] / rec.scale - rec.translation[1]) == pytest.approx(a.center[1])


@settings(max_examples=50, deadline=None)
@given(side=st.floats(0.5, 20), ox=st.floats(-50, 50), oy=st.floats(-50, 50))
def test_normalized_bbox_property(side, ox, oy):
    n, _ = R.normalize_room(square_room(side, (ox, oy), doors=()))
    xmin, ymin, xmax, ymax = n.envelope.polygon().bbox()
    assert abs(xmin) < 1e-9 and abs(ymin) < 1e-9
    assert max(xmax - xmin, ymax - ymin) == pytest.approx(1.0, abs=1e-12)


def test_canonical_order():
    ents = [bed(0.7),
            R.Entity(vocab.CASEWORK, vocab.category_id("base_cabinet"), 1, 0.2, 0.3, 0.6, 0.6),
            bed(0.2)]
    ordered = R.canonical_order(ents)
    assert ordered[0].kind == vocab.CASEWORK
    assert [e.t for e in ordered[1:]] == [0.2, 0.7]


def test_door_clearance_rect_points_into_room():
    r = square_room()
    rect = R.door_clearance_rect(r.envelope, r.envelope.doors[0], 0.9)
    assert rect.center == pytest.approx((2.0, 0.45))
    assert geo.rect_outside_polygon_area(rect, r.envelope.polygon()) == pytest.approx(0.0, abs=1e-12)
