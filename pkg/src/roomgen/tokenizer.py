"""Rooms to sparse attribute-feature matrices and back.

Each column of a matrix is one token bundle (CLS, TOPO, LAYOUT, an edge, an opening,
an entity, ...); each row is one feature. Entries a token type does not use hold the
sentinel ``SENTINEL`` (-100). Grouped features occupy ``arity`` consecutive rows.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np

from . import vocab
from .room import Entity, Room, RoomEnvelope

SENTINEL = -100.0
S_ENC = 64
S_DEC = 48


class TokenizerError(ValueError):
    pass


class EncToken(IntEnum):
    CLS = 0
    TOPO = 1
    LAYOUT = 2
    EDGE = 3
    DOOR = 4
    WINDOW = 5
    EOS = 6
    PAD = 7


class DecToken(IntEnum):
    SOS = 0
    PROP = 1
    CASEWORK = 2
    EOS = 3
    PAD = 4


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "categorical" | "scalar" | "group"
    applies_to: frozenset
    vocab: int = 0
    members: tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.members) if self.kind == "group" else 1

    @property
    def row_names(self) -> tuple[str, ...]:
        return self.members if self.kind == "group" else (self.name,)


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    token_types: tuple[str, ...]
    features: tuple[Feature, ...]
    pad_type: int = field(default=-1)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise TokenizerError(f"duplicate feature names in {self.name} schema")
        first = self.features[:2]
        if [f.name for f in first] != ["token_type_id", "token_id"] or any(f.kind != "categorical" for f in first):
            raise TokenizerError("first two rows must be categorical token_type_id and token_id")

    @cached_property
    def offsets(self) -> dict[str, int]:
        out, row = {}, 0
        for f in self.features:
            out[f.name] = row
            row += f.arity
        return out

    @property
    def n_rows(self) -> int:
        return sum(f.arity for f in self.features)

    @cached_property
    def row_names(self) -> tuple[str, ...]:
        return tuple(n for f in self.features for n in f.row_names)

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def rows(self, name: str) -> slice:
        f = self.feature(name)
        return slice(self.offsets[name], self.offsets[name] + f.arity)

    @cached_property
    def applicability(self) -> np.ndarray:
        """(n_token_types, n_features) bool table."""
        a = np.zeros((len(self.token_types), len(self.features)), dtype=bool)
        for j, f in enumerate(self.features):
            for t in f.applies_to:
                a[t, j] = True
        return a

    def active_rows(self, token_type: int) -> set[str]:
        return {f.name for j, f in enumerate(self.features) if self.applicability[token_type, j]}

    def fingerprint(self) -> str:
        desc = {
            "name": self.name,
            "token_types": list(self.token_types),
            "features": [
                {"name": f.name, "kind": f.kind, "vocab": f.vocab, "members": list(f.members),
                 "applies_to": sorted(int(t) for t in f.applies_to)}
                for f in self.features
            ],
        }
        return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


def _cat(name, vocab_size, applies):
    return Feature(name, "categorical", frozenset(applies), vocab=vocab_size)


def _scalar(name, applies):
    return Feature(name, "scalar", frozenset(applies))


def _group(name, members, applies):
    return Feature(name, "group", frozenset(applies), members=tuple(members))


def default_schemas() -> tuple[FeatureSchema, FeatureSchema]:
    E = EncToken
    all_enc = set(E)
    no_pad = all_enc - {E.PAD}
    openings = {E.DOOR, E.WINDOW}
    enc = FeatureSchema(
        "encoder",
        tuple(t.name for t in E),
        (
            _cat("token_type_id", len(E), all_enc),
            # one extra id is reserved as the MLM mask id
            _cat("token_id", vocab.MAX_TOKEN_ID + 1, no_pad),
            _cat("room_type", len(vocab.ROOM_TYPES), {E.TOPO}),
            _scalar("area", {E.LAYOUT}),
            _scalar("perimeter", {E.LAYOUT}),
            _scalar("n_edges", {E.LAYOUT}),
            _scalar("aspect_ratio", {E.LAYOUT}),
            _scalar("compactness", {E.LAYOUT}),
            _group("edge_endpoints", ("edge_x1", "edge_y1", "edge_x2", "edge_y2"), {E.EDGE}),
            _scalar("edge_length", {E.EDGE}),
            _scalar("edge_rel_length", {E.EDGE}),
            _group("edge_thickness", ("thickness_in", "thickness_out"), {E.EDGE}),
            _cat("wall_condition", len(vocab.WALL_CONDITIONS), {E.EDGE}),
            _cat("edge_index", vocab.MAX_EDGES, openings),
            _cat("opening_family", max(len(vocab.DOOR_FAMILIES), len(vocab.WINDOW_FAMILIES)), openings),
            _scalar("opening_t", openings),
            _scalar("opening_width", openings),
            _group("opening_corner_dist", ("corner_dist_start", "corner_dist_end"), openings),
            _cat("door_swing", len(vocab.DOOR_SWINGS), {E.DOOR}),
        ),
        pad_type=int(E.PAD),
    )
    D = DecToken
    all_dec = set(D)
    ents = {D.PROP, D.CASEWORK}
    dec = FeatureSchema(
        "decoder",
        tuple(t.name for t in D),
        (
            _cat("token_type_id", len(D), all_dec),
            _cat("token_id", vocab.MAX_TOKEN_ID, all_dec - {D.PAD}),
            _cat("entity_category", len(vocab.ENTITY_CATEGORIES), ents),
            _cat("edge_index", vocab.MAX_EDGES, ents),
            _scalar("t", ents),
            _scalar("delta", ents),
            _group("size", ("width", "depth"), ents),
            _scalar("rho", {D.PROP}),
            _cat("extra", len(vocab.ENTITY_EXTRAS), ents),
        ),
        pad_type=int(D.PAD),
    )
    return enc, dec


ENC_SCHEMA, DEC_SCHEMA = default_schemas()


@dataclass(frozen=True)
class EncMatrix:
    values: np.ndarray  # (F_enc, S_enc)
    attn_mask: np.ndarray  # (S_enc,) True for non-PAD columns
    schema: FeatureSchema = ENC_SCHEMA

    @property
    def n_active(self) -> int:
        return int(self.attn_mask.sum())


@dataclass(frozen=True)
class DecMatrix:
    """Full decoder sequence SOS, entities..., EOS, PAD... (one column per token)."""

    values: np.ndarray  # (F_dec, S_dec)
    attn_mask: np.ndarray
    schema: FeatureSchema = DEC_SCHEMA

    @property
    def n_active(self) -> int:
        return int(self.attn_mask.sum())

    def _pad_column(self) -> np.ndarray:
        col = np.full(self.values.shape[0], SENTINEL)
        col[self.schema.rows("token_type_id")] = self.schema.pad_type
        return col

    def inputs(self) -> np.ndarray:
        """Teacher-forcing input: the sequence with its EOS column turned into PAD."""
        x = self.values.copy()
        eos = self.n_active - 1
        x[:, eos] = self._pad_column()
        return x

    def targets(self) -> np.ndarray:
        """Targets aligned with ``inputs``: shifted left by one, PAD-filled at the end."""
        y = np.empty_like(self.values)
        y[:, :-1] = self.values[:, 1:]
        y[:, -1] = self._pad_column()
        return y


def _blank(schema: FeatureSchema, s: int) -> np.ndarray:
    x = np.full((schema.n_rows, s), SENTINEL)
    x[schema.offsets["token_type_id"], :] = schema.pad_type
    return x


def encode_envelope(env: RoomEnvelope, s_enc: int = S_ENC, schema: FeatureSchema = ENC_SCHEMA) -> EncMatrix:
    n_e, n_d, n_w = len(env.walls), len(env.doors), len(env.windows)
    need = 4 + n_e + n_d + n_w
    if need > s_enc:
        raise TokenizerError(f"envelope needs {need} columns but S_enc = {s_enc}")
    if n_e > vocab.MAX_EDGES:
        raise TokenizerError(f"{n_e} walls exceed the edge vocabulary ({vocab.MAX_EDGES})")
    x = _blank(schema, s_enc)
    off = schema.offsets
    col = 0

    def put(ttype, tid, **vals):
        nonlocal col
        x[off["token_type_id"], col] = int(ttype)
        x[off["token_id"], col] = tid
        for name, v in vals.items():
            x[schema.rows(name), col] = v
        col += 1

    ls = env.layout_scalars
    put(EncToken.CLS, 0)
    put(EncToken.TOPO, 0, room_type=env.room_type)
    put(EncToken.LAYOUT, 0, area=ls.area, perimeter=ls.perimeter, n_edges=ls.n_edges,
        aspect_ratio=ls.aspect_ratio, compactness=ls.compactness)
    for j, w in enumerate(env.walls):
        put(EncToken.EDGE, j, edge_endpoints=(w.x1[0], w.x1[1], w.x2[0], w.x2[1]), edge_length=w.length,
            edge_rel_length=w.length / ls.perimeter, edge_thickness=(w.thickness_in, w.thickness_out),
            wall_condition=w.condition)
    for ttype, ops in ((EncToken.DOOR, env.doors), (EncToken.WINDOW, env.windows)):
        for k, o in enumerate(ops):
            length = env.walls[o.edge_index].length
            vals = dict(edge_index=o.edge_index, opening_family=o.family, opening_t=o.t, opening_width=o.width,
                        opening_corner_dist=(o.t * length, (1.0 - o.t) * length))
            if ttype == EncToken.DOOR:
                vals["door_swing"] = o.swing
            put(ttype, k, **vals)
    put(EncToken.EOS, 0)
    mask = np.zeros(s_enc, dtype=bool)
    mask[:col] = True
    return EncMatrix(x, mask, schema)


def entity_column(schema: FeatureSchema, e: Entity, token_id: int) -> np.ndarray:
    col = np.full(schema.n_rows, SENTINEL)
    ttype = DecToken.PROP if e.kind == vocab.PROP else DecToken.CASEWORK
    col[schema.offsets["token_type_id"]] = int(ttype)
    col[schema.offsets["token_id"]] = min(token_id, vocab.MAX_TOKEN_ID - 1)
    col[schema.rows("entity_category")] = e.category
    col[schema.rows("edge_index")] = e.edge_index
    col[schema.rows("t")] = e.t
    col[schema.rows("delta")] = e.delta
    col[schema.rows("size")] = (e.width, e.depth)
    if ttype == DecToken.PROP:
        col[schema.rows("rho")] = e.rho
    col[schema.rows("extra")] = e.extra
    return col


def special_column(schema: FeatureSchema, ttype: DecToken) -> np.ndarray:
    col = np.full(schema.n_rows, SENTINEL)
    col[schema.offsets["token_type_id"]] = int(ttype)
    col[schema.offsets["token_id"]] = 0
    return col


def encode_entity_sequence(entities, s_dec: int = S_DEC, schema: FeatureSchema = DEC_SCHEMA) -> DecMatrix:
    """SOS, entities in the given order, EOS, PAD... (no reordering)."""
    n = len(entities)
    if n + 2 > s_dec:
        raise TokenizerError(f"entity sequence needs {n + 2} columns but S_dec = {s_dec}")
    x = _blank(schema, s_dec)
    x[:, 0] = special_column(schema, DecToken.SOS)
    counts = {vocab.PROP: 0, vocab.CASEWORK: 0}
    for i, e in enumerate(entities):
        x[:, i + 1] = entity_column(schema, e, counts[e.kind])
        counts[e.kind] += 1
    x[:, n + 1] = special_column(schema, DecToken.EOS)
    mask = np.zeros(s_dec, dtype=bool)
    mask[: n + 2] = True
    return DecMatrix(x, mask, schema)


def encode_entities(r: Room, s_dec: int = S_DEC, schema: FeatureSchema = DEC_SCHEMA) -> DecMatrix:
    return encode_entity_sequence(r.entities, s_dec, schema)


def entity_from_column(schema: FeatureSchema, col: np.ndarray) -> Entity:
    ttype = int(col[schema.offsets["token_type_id"]])
    kind = vocab.PROP if ttype == DecToken.PROP else vocab.CASEWORK
    w, d = col[schema.rows("size")]
    return Entity(
        kind=kind,
        category=int(col[schema.offsets["entity_category"]]),
        edge_index=int(col[schema.offsets["edge_index"]]),
        t=float(col[schema.offsets["t"]]),
        delta=float(col[schema.offsets["delta"]]),
        width=float(w),
        depth=float(d),
        rho=float(col[schema.offsets["rho"]]) if kind == vocab.PROP else 0.0,
        extra=int(col[schema.offsets["extra"]]),
    )


def decode_entities(m: DecMatrix, env: RoomEnvelope) -> list[Entity]:
    schema = m.schema
    types = m.values[schema.offsets["token_type_id"]].astype(int)
    if types.size == 0 or types[0] != DecToken.SOS:
        raise TokenizerError("decoder sequence must start with SOS")
    out = []
    for s in range(1, types.size):
        t = types[s]
        if t == DecToken.EOS:
            return out
        if t not in (DecToken.PROP, DecToken.CASEWORK):
            raise TokenizerError(f"unexpected token type {DecToken(t).name} at position {s}")
        e = entity_from_column(schema, m.values[:, s])
        if not 0 <= e.edge_index < len(env.walls):
            raise TokenizerError(f"edge index {e.edge_index} at position {s} not in [0, {len(env.walls)})")
        out.append(e)
    raise TokenizerError("decoder sequence has no EOS")


def stack_batch(mats, trim: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Stack matrices to (B, F, S) plus (B, S) masks; optionally trim trailing all-PAD columns."""
    x = np.stack([m.values for m in mats])
    mask = np.stack([m.attn_mask for m in mats])
    if trim:
        s = int(mask.sum(axis=1).max())
        x, mask = x[:, :, :s], mask[:, :s]
    return x, mask


def dump_csv(values: np.ndarray, schema: FeatureSchema, path) -> None:
    """Debug dump: one row per matrix row, sentinels left visible."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature"] + [f"s{i}" for i in range(values.shape[1])])
        for name, row in zip(schema.row_names, values):
            w.writerow([name] + [repr(float(v)) for v in row])
