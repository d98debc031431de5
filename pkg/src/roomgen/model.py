"""Encoder-decoder transformer over token-bundle embeddings, plus constrained generation."""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from . import tokenizer as tok
from . import vocab
from .embedding import FeatureEmbedding
from .layers import LayerNorm, Linear, Module
from .room import Entity, RoomEnvelope
from .tokenizer import DEC_SCHEMA, ENC_SCHEMA, DecToken

CHECKPOINT_FORMAT = "roomgen-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 64
    n_layers_enc: int = 4
    n_layers_dec: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    s_enc: int = tok.S_ENC
    s_dec: int = tok.S_DEC
    seed: int = 0

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if min(self.d, self.n_heads, self.ffn_mult, self.s_enc, self.s_dec) <= 0 or min(
                self.n_layers_enc, self.n_layers_dec) < 0:
            raise ValueError("model sizes must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def attention_bias(allowed: np.ndarray) -> np.ndarray:
    return np.where(allowed, 0.0, -np.inf)


class MultiHeadAttention(Module):
    def __init__(self, rng, d: int, n_heads: int):
        super().__init__()
        self.h = n_heads
        self.dh = d // n_heads
        self.q = self.child("q", Linear(rng, d, d))
        self.k = self.child("k", Linear(rng, d, d))
        self.v = self.child("v", Linear(rng, d, d))
        self.o = self.child("o", Linear(rng, d, d))
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x, b, s):
        return T.transpose(T.reshape(x, (b, s, self.h, self.dh)), (0, 2, 1, 3))

    def __call__(self, x, mem, bias: np.ndarray):
        """``bias``: (B, Sq, Sk) additive mask with 0 / -inf entries."""
        b, sq, d = x.shape
        sk = mem.shape[1]
        q = self._split(self.q(x), b, sq)
        k = self._split(self.k(mem), b, sk)
        v = self._split(self.v(mem), b, sk)
        scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(self.dh))
        scores = scores + np.broadcast_to(bias[:, None], scores.shape)
        w = T.softmax(scores, axis=-1)
        self.last_weights = w.data
        ctx = T.reshape(T.transpose(T.matmul(w, v), (0, 2, 1, 3)), (b, sq, d))
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, rng, d: int, mult: int):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(rng, d, d * mult))
        self.fc2 = self.child("fc2", Linear(rng, d * mult, d))

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock(Module):
    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.ln1 = self.child("ln1", LayerNorm(cfg.d))
        self.attn = self.child("attn", MultiHeadAttention(rng, cfg.d, cfg.n_heads))
        self.ln2 = self.child("ln2", LayerNorm(cfg.d))
        self.ffn = self.child("ffn", FeedForward(rng, cfg.d, cfg.ffn_mult))

    def __call__(self, x, bias):
        h = self.ln1(x)
        x = x + self.attn(h, h, bias)
        return x + self.ffn(self.ln2(x))


class DecoderBlock(Module):
    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.ln1 = self.child("ln1", LayerNorm(cfg.d))
        self.self_attn = self.child("self_attn", MultiHeadAttention(rng, cfg.d, cfg.n_heads))
        self.ln2 = self.child("ln2", LayerNorm(cfg.d))
        self.cross_attn = self.child("cross_attn", MultiHeadAttention(rng, cfg.d, cfg.n_heads))
        self.ln3 = self.child("ln3", LayerNorm(cfg.d))
        self.ffn = self.child("ffn", FeedForward(rng, cfg.d, cfg.ffn_mult))

    def __call__(self, x, mem, self_bias, cross_bias):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, self_bias)
        x = x + self.cross_attn(self.ln2(x), mem, cross_bias)
        return x + self.ffn(self.ln3(x))


@dataclass
class HeadOutputs:
    """Per-position decoder head outputs, each (B, S, ·)."""

    type_logits: T.Tensor
    category_logits: T.Tensor
    edge_logits: T.Tensor
    t_value: T.Tensor
    delta: T.Tensor
    size: T.Tensor
    rho: T.Tensor
    extra_logits: T.Tensor


class Stack(Module):
    def __init__(self, blocks):
        super().__init__()
        self.blocks = [self.child(str(i), b) for i, b in enumerate(blocks)]


class LayoutTransformer(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d
        self.enc_embed = self.child("enc_embed", FeatureEmbedding(ENC_SCHEMA, d, cfg.s_enc, rng))
        self.encoder = self.child("encoder", Stack([EncoderBlock(rng, cfg) for _ in range(cfg.n_layers_enc)]))
        self.enc_norm = self.child("enc_norm", LayerNorm(d)) if cfg.n_layers_enc else None
        self.room_head = self.child("room_head", Linear(rng, d, len(vocab.ROOM_TYPES)))
        self.id_head = self.child("id_head", Linear(rng, d, vocab.MAX_TOKEN_ID))

        self.dec_embed = self.child("dec_embed", FeatureEmbedding(DEC_SCHEMA, d, cfg.s_dec, rng))
        self.decoder = self.child("decoder", Stack([DecoderBlock(rng, cfg) for _ in range(cfg.n_layers_dec)]))
        self.dec_norm = self.child("dec_norm", LayerNorm(d)) if cfg.n_layers_dec else None
        self.type_head = self.child("type_head", Linear(rng, d, len(DecToken)))
        self.category_head = self.child("category_head", Linear(rng, d, len(vocab.ENTITY_CATEGORIES)))
        self.edge_head = self.child("edge_head", Linear(rng, d, vocab.MAX_EDGES))
        self.t_head = self.child("t_head", Linear(rng, d, 1))
        self.delta_head = self.child("delta_head", Linear(rng, d, 1))
        self.size_head = self.child("size_head", Linear(rng, d, 2))
        self.rho_head = self.child("rho_head", Linear(rng, d, 1))
        self.extra_head = self.child("extra_head", Linear(rng, d, len(vocab.ENTITY_EXTRAS)))

    # parameter groups -----------------------------------------------------
    ENCODER_PARTS = ("enc_embed", "encoder", "enc_norm", "room_head", "id_head")

    def encoder_parameters(self) -> list[T.Tensor]:
        return [p for k, p in self.named_parameters() if k.split(".")[0] in self.ENCODER_PARTS]

    def decoder_parameters(self) -> list[T.Tensor]:
        return [p for k, p in self.named_parameters() if k.split(".")[0] not in self.ENCODER_PARTS]

    # forward passes -------------------------------------------------------
    def encode(self, x_enc: np.ndarray, attn_mask: np.ndarray, embedded=None):
        """Memory M (B, S_enc, d). Padded key positions are excluded from attention."""
        x = self.enc_embed(x_enc) if embedded is None else embedded
        b, s = attn_mask.shape
        bias = attention_bias(np.broadcast_to(attn_mask[:, None, :], (b, s, s)))
        for blk in self.encoder.blocks:
            x = blk(x, bias)
        return self.enc_norm(x) if self.enc_norm is not None else x

    @staticmethod
    def pool_cls(mem):
        return mem[:, 0, :]

    def room_logits(self, z):
        return self.room_head(z)

    def id_logits(self, mem):
        return self.id_head(mem)

    def decode(self, x_dec: np.ndarray, dec_mask: np.ndarray, mem, enc_mask: np.ndarray,
               embedded=None) -> HeadOutputs:
        x = self.dec_embed(x_dec) if embedded is None else embedded
        b, s = dec_mask.shape
        causal = np.tril(np.ones((s, s), dtype=bool))
        self_bias = attention_bias(causal[None] & dec_mask[:, None, :])
        cross_bias = attention_bias(np.broadcast_to(enc_mask[:, None, :], (b, s, enc_mask.shape[1])))
        for blk in self.decoder.blocks:
            x = blk(x, mem, self_bias, cross_bias)
        h = self.dec_norm(x) if self.dec_norm is not None else x
        return self.heads(h)

    def heads(self, h) -> HeadOutputs:
        return HeadOutputs(
            type_logits=self.type_head(h),
            category_logits=self.category_head(h),
            edge_logits=self.edge_head(h),
            t_value=T.sigmoid(self.t_head(h)),
            delta=self.delta_head(h),
            size=self.size_head(h),
            rho=self.rho_head(h),
            extra_logits=self.extra_head(h),
        )

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


# -- constrained generation ---------------------------------------------------

_ENT_OR_EOS = frozenset({DecToken.PROP, DecToken.CASEWORK, DecToken.EOS})
DEFAULT_GRAMMAR = {DecToken.SOS: _ENT_OR_EOS, DecToken.PROP: _ENT_OR_EOS, DecToken.CASEWORK: _ENT_OR_EOS}


@dataclass
class DecodeConstraints:
    n_edges: int
    t_range: tuple[float, float] = (0.0, 1.0)
    delta_range: tuple[float, float] = (0.0, 1.0)
    size_range: tuple[float, float] = (0.01, 1.0)
    max_steps: int = tok.S_DEC - 2
    grammar: dict = field(default_factory=lambda: dict(DEFAULT_GRAMMAR))

    def allowed_types(self, prev: int, step: int) -> frozenset:
        if step >= self.max_steps:
            return frozenset({DecToken.EOS})
        return self.grammar.get(DecToken(prev), frozenset({DecToken.EOS}))


def _masked_choice(logits: np.ndarray, allowed: np.ndarray, rng, temperature: float) -> int:
    z = np.where(allowed, logits, -np.inf)
    if rng is None:
        return int(np.argmax(z))
    z = z / temperature
    p = np.exp(z - z.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


_KIND_MASKS = {
    DecToken.PROP: np.array([k == vocab.PROP for k in vocab.CATEGORY_KIND]),
    DecToken.CASEWORK: np.array([k == vocab.CASEWORK for k in vocab.CATEGORY_KIND]),
}


def generate_batch(model: LayoutTransformer, envs: Sequence[RoomEnvelope],
                   constraints: Optional[Sequence[DecodeConstraints]] = None, mode: str = "greedy",
                   seed: int = 0, temperature: float = 1.0) -> list[list[Entity]]:
    """Autoregressively decode entity lists for (normalized) envelopes.

    The type head is restricted to grammar-allowed successors, categories to the
    chosen kind, edges to existing walls; regression outputs are clamped.
    """
    if mode not in ("greedy", "sampled"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    rng = np.random.default_rng(seed) if mode == "sampled" else None
    cfg = model.cfg
    if constraints is None:
        constraints = [DecodeConstraints(n_edges=len(e.walls), max_steps=cfg.s_dec - 2) for e in envs]
    b = len(envs)
    enc_mats = [tok.encode_envelope(e, cfg.s_enc) for e in envs]
    x_enc, enc_mask = tok.stack_batch(enc_mats)
    schema = DEC_SCHEMA
    with T.no_grad():
        mem = model.encode(x_enc, enc_mask)
        max_len = max(c.max_steps for c in constraints) + 1
        cols = np.full((b, schema.n_rows, max_len + 1), tok.SENTINEL)
        cols[:, schema.offsets["token_type_id"], :] = schema.pad_type
        cols[:, :, 0] = tok.special_column(schema, DecToken.SOS)[None]
        out: list[list[Entity]] = [[] for _ in range(b)]
        prev = [int(DecToken.SOS)] * b
        done = [False] * b
        counts = [{vocab.PROP: 0, vocab.CASEWORK: 0} for _ in range(b)]
        step = 0
        while not all(done) and step < max_len:
            length = step + 1
            mask = cols[:, schema.offsets["token_type_id"], :length] != schema.pad_type
            heads = model.decode(cols[:, :, :length], mask, mem, enc_mask)
            pos = step
            for i in range(b):
                if done[i]:
                    continue
                c = constraints[i]
                allowed_t = np.zeros(len(DecToken), dtype=bool)
                allowed_t[list(c.allowed_types(prev[i], step))] = True
                ttype = _masked_choice(heads.type_logits.data[i, pos], allowed_t, rng, temperature)
                if ttype == DecToken.EOS:
                    done[i] = True
                    continue
                cat = _masked_choice(heads.category_logits.data[i, pos], _KIND_MASKS[ttype], rng, temperature)
                edge_ok = np.arange(vocab.MAX_EDGES) < c.n_edges
                edge = _masked_choice(heads.edge_logits.data[i, pos], edge_ok, rng, temperature)
                extra = _masked_choice(heads.extra_logits.data[i, pos],
                                       np.ones(len(vocab.ENTITY_EXTRAS), dtype=bool), rng, temperature)
                kind = vocab.PROP if ttype == DecToken.PROP else vocab.CASEWORK
                w, dpt = np.clip(heads.size.data[i, pos], *c.size_range)
                ent = Entity(
                    kind=kind,
                    category=cat,
                    edge_index=edge,
                    t=float(np.clip(heads.t_value.data[i, pos, 0], *c.t_range)),
                    delta=float(np.clip(heads.delta.data[i, pos, 0], *c.delta_range)),
                    width=float(w),
                    depth=float(dpt),
                    rho=float(np.clip(heads.rho.data[i, pos, 0], -math.pi, math.pi)) if kind == vocab.PROP else 0.0,
                    extra=extra,
                )
                out[i].append(ent)
                cols[i, :, length] = tok.entity_column(schema, ent, counts[i][kind])
                counts[i][kind] += 1
                prev[i] = ttype
            step += 1
    return out


def generate(env: RoomEnvelope, model: LayoutTransformer, constraints: Optional[DecodeConstraints] = None,
             mode: str = "greedy", seed: int = 0, temperature: float = 1.0) -> list[Entity]:
    cons = None if constraints is None else [constraints]
    return generate_batch(model, [env], cons, mode=mode, seed=seed, temperature=temperature)[0]


# -- checkpoints ----------------------------------------------------------------

def schema_fingerprints() -> dict[str, str]:
    return {"encoder": ENC_SCHEMA.fingerprint(), "decoder": DEC_SCHEMA.fingerprint()}


def write_npz(path, arrays: dict) -> None:
    """``np.savez``-compatible archive with fixed entry timestamps, so equal arrays give equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            entry = io.BytesIO()
            np.lib.format.write_array(entry, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), entry.getvalue())
    Path(path).write_bytes(buf.getvalue())


def save_checkpoint(model: LayoutTransformer, path, extra: Optional[dict] = None) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "fingerprints": schema_fingerprints(),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    write_npz(path, arrays)


def load_checkpoint(path) -> tuple[LayoutTransformer, dict]:
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    if meta.get("fingerprints") != schema_fingerprints():
        raise CheckpointError(
            f"{path}: feature schema fingerprint mismatch "
            f"(checkpoint {meta.get('fingerprints')}, code {schema_fingerprints()})")
    model = LayoutTransformer(ModelConfig.from_dict(meta["config"]))
    model.load_state_dict(params)
    return model, meta
