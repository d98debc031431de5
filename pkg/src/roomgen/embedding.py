"""Mixed categorical/continuous feature embedding with exact masking.

A feature contributes to a token only when it is applicable to that token's type
(and its entry is not the sentinel). Inactive entries are replaced before the
embedder runs and their outputs are multiplied by zero, so whatever sits at an
inactive position has no influence on the result.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Linear, MLP, Module, normal
from .tokenizer import SENTINEL, FeatureSchema


class EmbeddingError(ValueError):
    pass


class CategoricalEmbedder(Module):
    """Table of shape (vocab + 1, d); the last row is the padding entry, kept at zero."""

    def __init__(self, rng, vocab: int, d: int):
        super().__init__()
        self.vocab = vocab
        table = normal(rng, (vocab + 1, d))
        table[vocab] = 0.0
        self.table = self.param("table", table)

    def __call__(self, ids: np.ndarray):
        return T.embedding_lookup(self.table, ids)


class ScalarEmbedder(Module):
    def __init__(self, rng, d: int, hidden: int):
        super().__init__()
        self.mlp = self.child("mlp", MLP(rng, 1, hidden, d))

    def __call__(self, values: np.ndarray):
        return self.mlp(T.Tensor(values[..., None]))


class GroupEmbedder(Module):
    """Embed each member scalar with a shared map, mean-pool across the group, project to d."""

    def __init__(self, rng, arity: int, d: int, hidden: int):
        super().__init__()
        self.arity = arity
        self.member = self.child("member", Linear(rng, 1, hidden))
        self.proj = self.child("proj", Linear(rng, hidden, d))

    def __call__(self, values: np.ndarray):
        if values.shape[-1] != self.arity:
            raise EmbeddingError(f"group expects {self.arity} members, got {values.shape[-1]}")
        h = T.gelu(self.member(T.Tensor(values[..., None])))
        return self.proj(T.mean(h, axis=-2))


class FeatureEmbedding(Module):
    """Maps (B, F, S) attribute-feature matrices to (B, S, d) token embeddings."""

    def __init__(self, schema: FeatureSchema, d: int, s_max: int, rng: np.random.Generator,
                 hidden: int | None = None):
        super().__init__()
        self.schema = schema
        self.d = d
        hidden = hidden or max(d // 2, 1)
        self.embedders = []
        for f in schema.features:
            if f.kind == "categorical":
                m = CategoricalEmbedder(rng, f.vocab, d)
            elif f.kind == "scalar":
                m = ScalarEmbedder(rng, d, hidden)
            else:
                m = GroupEmbedder(rng, f.arity, d, hidden)
            self.embedders.append(self.child(f.name, m))
        self.positions = self.param("positions", normal(rng, (s_max, d)))
        # extra all-False row for columns whose type id is itself a sentinel
        app = schema.applicability
        self._app = np.vstack([app, np.zeros((1, app.shape[1]), dtype=bool)])

    def feature_masks(self, x: np.ndarray) -> np.ndarray:
        """(B, S, n_features) bool: feature applicable to the column type and entry present."""
        type_row = x[:, self.schema.offsets["token_type_id"], :]
        types = np.where(type_row == SENTINEL, -1, type_row).astype(np.int64)
        if types.size and types.max() >= len(self.schema.token_types):
            raise EmbeddingError(f"token type id {types.max()} outside the {self.schema.name} vocabulary")
        masks = self._app[types]
        for j, f in enumerate(self.schema.features):
            masks[..., j] &= x[:, self.schema.offsets[f.name], :] != SENTINEL
        return masks

    def __call__(self, x: np.ndarray, features=None):
        """Embed a batch. ``features`` optionally restricts the sum to a subset of feature names."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.schema.n_rows:
            raise EmbeddingError(f"expected (B, {self.schema.n_rows}, S) input, got {x.shape}")
        b, _, s = x.shape
        if s > self.positions.shape[0]:
            raise EmbeddingError(f"sequence length {s} exceeds positional table {self.positions.shape[0]}")
        masks = self.feature_masks(x)
        out = None
        for j, (f, emb) in enumerate(zip(self.schema.features, self.embedders)):
            if features is not None and f.name not in features:
                continue
            m = masks[..., j]
            if not m.any():
                continue
            rows = self.schema.rows(f.name)
            if f.kind == "categorical":
                raw = x[:, rows.start, :]
                active = raw[m]
                if active.size and (active.min() < 0 or active.max() >= f.vocab or np.any(active != np.round(active))):
                    raise EmbeddingError(f"{f.name}: categorical value outside [0, {f.vocab})")
                u = emb(np.where(m, raw, f.vocab).astype(np.int64))
            elif f.kind == "scalar":
                u = emb(np.where(m, x[:, rows.start, :], 0.0))
            else:
                vals = np.where(m[:, None, :], x[:, rows, :], 0.0)  # (B, k, S)
                u = emb(np.transpose(vals, (0, 2, 1)))
            term = u * np.broadcast_to(m[..., None], u.shape).astype(np.float64)
            out = term if out is None else out + term
        pos = self.positions[:s]
        if out is None:
            return T.add(T.Tensor(np.zeros((b, s, self.d))), pos)
        return out + pos
