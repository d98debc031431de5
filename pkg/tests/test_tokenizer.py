import numpy as np
import pytest

from roomgen import room as R
from roomgen import tokenizer as tok
from roomgen import vocab
from roomgen.dataset import SynthConfig, synth_generate
from roomgen.tokenizer import DEC_SCHEMA, ENC_SCHEMA, SENTINEL, DecToken, EncToken


@pytest.fixture(scope="module")
def rooms():
    return synth_generate(SynthConfig(seed=11), 120)


def square_env(doors=1, windows=0):
    pts = [(0, 0), (4, 0), (4, 3), (0, 3)]
    ds = tuple(R.Opening("door", 0, 0.5, 0.9, 0, 0) for _ in range(doors))
    ws = tuple(R.Opening("window", 2, 0.5, 1.0, 1) for _ in range(windows))
    return R.make_envelope(0, R.walls_from_points(pts), ds, ws)


def cabinet(t):
    return R.Entity(vocab.CASEWORK, vocab.category_id("base_cabinet"), 1, t, 0.3, 0.6, 0.6)


def chair(t):
    return R.Entity(vocab.PROP, vocab.category_id("bed"), 2, t, 1.0, 1.6, 2.0, 0.4, 1)


# -- schemas --------------------------------------------------------------------------------

def test_schema_leading_rows():
    for schema in (ENC_SCHEMA, DEC_SCHEMA):
        assert schema.row_names[:2] == ("token_type_id", "token_id")
        assert schema.applicability[:, 0].all()


def test_schema_rejects_bad_definitions():
    f = ENC_SCHEMA.features
    with pytest.raises(tok.TokenizerError):
        tok.FeatureSchema("x", ENC_SCHEMA.token_types, f + (f[3],))
    with pytest.raises(tok.TokenizerError):
        tok.FeatureSchema("x", ENC_SCHEMA.token_types, (f[1], f[0]) + f[2:])


def test_layout_and_door_active_rows():
    layout = ENC_SCHEMA.active_rows(EncToken.LAYOUT)
    assert "area" in layout and "edge_endpoints" not in layout
    assert ENC_SCHEMA.active_rows(EncToken.DOOR) == {
        "token_type_id", "token_id", "opening_family", "opening_t", "opening_width",
        "opening_corner_dist", "door_swing", "edge_index"}
    assert DEC_SCHEMA.active_rows(DecToken.CASEWORK) == DEC_SCHEMA.active_rows(DecToken.PROP) - {"rho"}


def test_fingerprint_stable_and_sensitive():
    a, _ = tok.default_schemas()
    assert a.fingerprint() == ENC_SCHEMA.fingerprint()
    assert ENC_SCHEMA.fingerprint() != DEC_SCHEMA.fingerprint()


# -- encoder ---------------------------------------------------------------------------------

def test_encoder_column_layout():
    m = tok.encode_envelope(square_env(doors=1), s_enc=16)
    assert m.n_active == 9
    types = m.values[ENC_SCHEMA.offsets["token_type_id"]].astype(int)
    want = [EncToken.CLS, EncToken.TOPO, EncToken.LAYOUT] + [EncToken.EDGE] * 4 + [EncToken.DOOR, EncToken.EOS]
    assert list(types[:9]) == [int(t) for t in want]
    assert (types[9:] == EncToken.PAD).all()
    assert list(m.attn_mask) == [True] * 9 + [False] * 7
    ids = m.values[ENC_SCHEMA.offsets["token_id"], 3:7]
    assert list(ids) == [0, 1, 2, 3]


def test_cls_column_only_carries_identifiers():
    m = tok.encode_envelope(square_env())
    active = np.flatnonzero(m.values[:, 0] != SENTINEL)
    assert [ENC_SCHEMA.row_names[i] for i in active] == ["token_type_id", "token_id"]


def test_envelope_without_openings():
    m = tok.encode_envelope(square_env(doors=0))
    types = m.values[0, : m.n_active].astype(int)
    assert list(types) == [EncToken.CLS, EncToken.TOPO, EncToken.LAYOUT] + [EncToken.EDGE] * 4 + [EncToken.EOS]


def test_encoder_overflow_names_length():
    with pytest.raises(tok.TokenizerError, match="needs 10"):
        tok.encode_envelope(square_env(doors=1, windows=1), s_enc=9)


def test_opening_corner_distances():
    m = tok.encode_envelope(square_env())
    rows = ENC_SCHEMA.rows("opening_corner_dist")
    np.testing.assert_allclose(m.values[rows, 7], [2.0, 2.0])


def _assert_sentinel_discipline(values, mask, schema):
    types = values[schema.offsets["token_type_id"]].astype(int)
    for j, f in enumerate(schema.features):
        rows = values[schema.rows(f.name)]
        applies = schema.applicability[types, j]
        if f.name == "token_type_id":
            continue
        active = (rows != SENTINEL).all(axis=0)
        blank = (rows == SENTINEL).all(axis=0)
        assert np.array_equal(active, applies & mask), f.name
        assert np.array_equal(blank, ~(applies & mask)), f.name


def test_sentinel_discipline_and_column_law(rooms):
    for r in rooms:
        env = r.envelope
        m = tok.encode_envelope(env)
        assert m.n_active == 4 + env.n_edges + len(env.doors) + len(env.windows)
        assert np.array_equal(m.attn_mask, m.values[0] != EncToken.PAD)
        _assert_sentinel_discipline(m.values, m.attn_mask, ENC_SCHEMA)
        d = tok.encode_entities(r)
        _assert_sentinel_discipline(d.values, d.attn_mask, DEC_SCHEMA)


def test_tokenization_is_bit_identical(rooms):
    for r in rooms[:10]:
        assert tok.encode_envelope(r.envelope).values.tobytes() == tok.encode_envelope(r.envelope).values.tobytes()
        assert tok.encode_entities(r).values.tobytes() == tok.encode_entities(r).values.tobytes()


# -- decoder ---------------------------------------------------------------------------------

def test_empty_contents_sequence():
    d = tok.encode_entity_sequence([])
    ttype = DEC_SCHEMA.offsets["token_type_id"]
    assert d.inputs()[ttype, 0] == DecToken.SOS
    assert (d.inputs()[ttype, 1:] == DecToken.PAD).all()
    assert d.targets()[ttype, 0] == DecToken.EOS
    assert tok.decode_entities(d, square_env()) == []


def test_teacher_forcing_shift():
    ents = [cabinet(0.2), cabinet(0.6), chair(0.5)]
    d = tok.encode_entity_sequence(ents)
    ttype = DEC_SCHEMA.offsets["token_type_id"]
    assert list(d.inputs()[ttype, :5]) == [DecToken.SOS, DecToken.CASEWORK, DecToken.CASEWORK, DecToken.PROP,
                                          DecToken.PAD]
    assert list(d.targets()[ttype, :5]) == [DecToken.CASEWORK, DecToken.CASEWORK, DecToken.PROP, DecToken.EOS,
                                           DecToken.PAD]
    rho = DEC_SCHEMA.offsets["rho"]
    assert d.values[rho, 1] == SENTINEL and d.values[rho, 3] == pytest.approx(0.4)
    # token ids count within each type
    tid = DEC_SCHEMA.offsets["token_id"]
    assert list(d.values[tid, 1:4]) == [0, 1, 0]


def test_decoder_overflow():
    with pytest.raises(tok.TokenizerError):
        tok.encode_entity_sequence([chair(0.1)] * 5, s_dec=6)


def test_decode_errors():
    env = square_env()
    d = tok.encode_entity_sequence([chair(0.5)])
    bad = d.values.copy()
    bad[DEC_SCHEMA.offsets["edge_index"], 1] = env.n_edges
    with pytest.raises(tok.TokenizerError, match="edge index"):
        tok.decode_entities(tok.DecMatrix(bad, d.attn_mask), env)
    no_eos = d.values.copy()
    no_eos[DEC_SCHEMA.offsets["token_type_id"], 2:] = DecToken.PROP
    with pytest.raises(tok.TokenizerError):
        tok.decode_entities(tok.DecMatrix(no_eos, d.attn_mask), env)


def test_round_trip(rooms):
    for r in rooms:
        got = tok.decode_entities(tok.encode_entities(r), r.envelope)
        assert len(got) == len(r.entities)
        for a, b in zip(got, r.entities):
            assert (a.kind, a.category, a.edge_index, a.extra) == (b.kind, b.category, b.edge_index, b.extra)
            for f in ("t", "delta", "width", "depth", "rho"):
                assert abs(getattr(a, f) - getattr(b, f)) <= 1e-9


def test_stack_batch_trims_to_longest():
    mats = [tok.encode_entity_sequence([chair(0.1)]), tok.encode_entity_sequence([chair(0.1)] * 3)]
    x, mask = tok.stack_batch(mats)
    assert x.shape == (2, DEC_SCHEMA.n_rows, 5) and mask.shape == (2, 5)
    x_full, _ = tok.stack_batch(mats, trim=False)
    assert x_full.shape[2] == tok.S_DEC


def test_csv_dump(tmp_path):
    m = tok.encode_envelope(square_env(), s_enc=10)
    path = tmp_path / "enc.csv"
    tok.dump_csv(m.values, ENC_SCHEMA, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + ENC_SCHEMA.n_rows
    assert lines[1].startswith("token_type_id,")
    assert "-100.0" in lines[3]
