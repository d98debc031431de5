"""Training objectives: entity-prediction heads, room-type CE, masked ids, triplet, geometry."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping, Optional

import numpy as np

from . import tensor as T
from . import vocab
from .room import RoomEnvelope, derive_layout_scalars
from .tokenizer import DEC_SCHEMA, ENC_SCHEMA, DecToken

HEADS = ("type", "category", "edge", "t", "delta", "size", "rho", "extra")
CATEGORICAL_HEADS = ("type", "category", "edge", "extra")
MASK_ID = vocab.MAX_TOKEN_ID
STD_EPS = 1e-8


@dataclass
class LossConfig:
    head_weights: dict = field(default_factory=lambda: {h: 1.0 for h in HEADS})
    beta_room: float = 0.5
    beta_mlm: float = 0.5
    beta_triplet: float = 0.2
    beta_geom: float = 0.1
    margin: float = 0.2
    mlm_rate: float = 0.15

    def __post_init__(self):
        weights = {h: 1.0 for h in HEADS}
        unknown = set(self.head_weights) - set(HEADS)
        if unknown:
            raise ValueError(f"unknown heads in head_weights: {sorted(unknown)}")
        weights.update(self.head_weights)
        self.head_weights = weights
        if min(weights.values()) < 0 or min(self.beta_room, self.beta_mlm, self.beta_triplet, self.beta_geom) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.mlm_rate < 1.0:
            raise ValueError("mlm_rate must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: Mapping) -> "LossConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d)


def _zero() -> T.Tensor:
    return T.Tensor(0.0)


def _ce_mean(logits: T.Tensor, targets: np.ndarray, active: np.ndarray) -> T.Tensor:
    n = int(active.sum())
    if n == 0:
        return _zero()
    c = logits.shape[-1]
    flat = T.reshape(logits, (-1, c))
    tgt = np.where(active, targets, 0).reshape(-1).astype(np.int64)
    return T.cross_entropy(flat, tgt, active.reshape(-1).astype(np.float64) / n)


def _mse_mean(pred: T.Tensor, targets: np.ndarray, active: np.ndarray) -> T.Tensor:
    """Mean over active positions of the per-position squared error averaged over components."""
    n = int(active.sum())
    if n == 0:
        return _zero()
    k = pred.shape[-1]
    tgt = np.where(active[..., None], targets, 0.0)
    diff = T.mul(T.sub(pred, tgt), np.broadcast_to(active[..., None], pred.shape).astype(np.float64))
    return T.scale(T.tsum(T.mul(diff, diff)), 1.0 / (n * k))


def ddep_loss(out, targets: np.ndarray, head_weights: Optional[Mapping[str, float]] = None,
              return_parts: bool = False):
    """Weighted sum over heads of per-head means over active target positions.

    ``targets`` is the (B, F_dec, S) shifted target matrix. A head is active where
    its target row applies: the type head on every non-PAD target, entity heads on
    PROP/CASEWORK targets, rho on PROP targets only.
    """
    lam = {h: 1.0 for h in HEADS}
    if head_weights:
        lam.update(head_weights)
    s = DEC_SCHEMA
    off = s.offsets
    ttype = targets[:, off["token_type_id"], :]
    on_type = ttype != s.pad_type
    on_ent = (ttype == DecToken.PROP) | (ttype == DecToken.CASEWORK)
    on_rho = ttype == DecToken.PROP

    def row(name):
        return targets[:, off[name], :]

    parts = {
        "type": _ce_mean(out.type_logits, np.where(on_type, ttype, 0), on_type),
        "category": _ce_mean(out.category_logits, row("entity_category"), on_ent),
        "edge": _ce_mean(out.edge_logits, row("edge_index"), on_ent),
        "extra": _ce_mean(out.extra_logits, row("extra"), on_ent),
        "t": _mse_mean(out.t_value, row("t")[..., None], on_ent),
        "delta": _mse_mean(out.delta, row("delta")[..., None], on_ent),
        "size": _mse_mean(out.size, np.transpose(targets[:, s.rows("size"), :], (0, 2, 1)), on_ent),
        "rho": _mse_mean(out.rho, row("rho")[..., None], on_rho),
    }
    total = _zero()
    for h in HEADS:
        if lam[h]:
            total = total + T.scale(parts[h], lam[h])
    return (total, parts) if return_parts else total


def room_cls_loss(logits: T.Tensor, room_types) -> T.Tensor:
    """Mean softmax cross-entropy of room-type logits (B, n_types)."""
    rt = np.atleast_1d(np.asarray(room_types, dtype=np.int64))
    logits = T.as_tensor(logits)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, -1))
    return T.cross_entropy(logits, rt, np.full(len(rt), 1.0 / len(rt)))


def mlm_mask(x_enc: np.ndarray, attn_mask: np.ndarray, rate: float, rng: np.random.Generator):
    """Pick non-PAD positions with probability ``rate`` and replace their token_id by the mask id.

    Returns (masked copy, selection (B, S) bool, original ids (B, S)). One redraw is
    attempted when nothing gets selected.
    """
    row = ENC_SCHEMA.offsets["token_id"]
    sel = (rng.random(attn_mask.shape) < rate) & attn_mask
    if not sel.any():
        sel = (rng.random(attn_mask.shape) < rate) & attn_mask
    original = x_enc[:, row, :].copy()
    x = x_enc.copy()
    x[:, row, :][sel] = MASK_ID
    return x, sel, original


def mlm_loss(model, x_enc: np.ndarray, attn_mask: np.ndarray, rate: float, rng: np.random.Generator) -> T.Tensor:
    """Cross-entropy of the id head on masked positions only (0 if none were drawn)."""
    x, sel, original = mlm_mask(x_enc, attn_mask, rate, rng)
    if not sel.any():
        return _zero()
    mem = model.encode(x, attn_mask)
    return _ce_mean(model.id_logits(mem), np.where(sel, original, 0), sel)


def pair_distances(z: T.Tensor) -> T.Tensor:
    """(B, d) -> (B, B) Euclidean distances."""
    b = z.shape[0]
    ii, jj = np.meshgrid(np.arange(b), np.arange(b), indexing="ij")
    diff = T.sub(T.getitem(z, ii.reshape(-1)), T.getitem(z, jj.reshape(-1)))
    return T.reshape(T.l2norm(diff, axis=-1), (b, b))


def triplet_loss(z_a, z_p, z_n, margin: float = 0.2) -> T.Tensor:
    """Mean of max(0, |a - p| - |a - n| + margin) over the given triplets."""
    z_a, z_p, z_n = T.as_tensor(z_a), T.as_tensor(z_p), T.as_tensor(z_n)
    hinge = T.relu(T.add(T.sub(T.l2norm(T.sub(z_a, z_p)), T.l2norm(T.sub(z_a, z_n))), margin))
    return T.mean(hinge)


def sample_triplets(labels, rng: np.random.Generator):
    """For every anchor with a same-label partner and an other-label room, draw one of each."""
    labels = np.asarray(labels)
    a, p, n = [], [], []
    for i, lab in enumerate(labels):
        pos = np.flatnonzero((labels == lab) & (np.arange(len(labels)) != i))
        neg = np.flatnonzero(labels != lab)
        if len(pos) and len(neg):
            a.append(i)
            p.append(int(rng.choice(pos)))
            n.append(int(rng.choice(neg)))
    return np.array(a, dtype=np.int64), np.array(p, dtype=np.int64), np.array(n, dtype=np.int64)


def geom_descriptors(envs) -> np.ndarray:
    """(area, perimeter, n_edges, aspect_ratio, compactness) per envelope."""
    rows = []
    for env in envs:
        ls = env.layout_scalars if isinstance(env, RoomEnvelope) and env.layout_scalars else derive_layout_scalars(env)
        rows.append(ls.as_tuple())
    return np.asarray(rows, dtype=np.float64)


def standardize(g: np.ndarray, eps: float = STD_EPS) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    return (g - g.mean(axis=0)) / (g.std(axis=0) + eps)


def geom_preserve_loss(z, g) -> T.Tensor:
    """Squared difference of max-normalized pairwise distance matrices, averaged over pairs."""
    z = T.as_tensor(z)
    b = z.shape[0]
    if b < 2:
        raise ValueError("geometry loss needs a batch of at least 2")
    de = pair_distances(z)
    de_max = T.tmax(de)
    if de_max.item() > 0:
        de = T.div(de, de_max)
    dg = pair_distances(T.Tensor(g)).data
    if dg.max() > 0:
        dg = dg / dg.max()
    diff = T.sub(de, dg)
    return T.scale(T.tsum(T.mul(diff, diff)), 1.0 / (b * (b - 1)))


def total_loss(parts: Mapping, cfg: LossConfig):
    """L_ddep + beta_room L_room + beta_mlm L_mlm + beta_triplet L_triplet + beta_geom L_geom."""
    def get(k):
        v = parts.get(k, 0.0)
        return T.as_tensor(v) if not isinstance(v, T.Tensor) else v

    total = get("ddep")
    for key, beta in (("room", cfg.beta_room), ("mlm", cfg.beta_mlm), ("triplet", cfg.beta_triplet),
                      ("geom", cfg.beta_geom)):
        total = T.add(total, T.scale(get(key), beta))
    return total

