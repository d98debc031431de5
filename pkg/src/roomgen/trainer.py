"""Deterministic training loop, evaluation and inference helpers."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import losses as L
from . import tensor as T
from . import tokenizer as tok
from .dataset import inventory_for
from .metrics_embedding import embedding_report
from .metrics_layout import NavConfig, OCWeights, score_layout, summarize
from .model import LayoutTransformer, generate_batch, save_checkpoint
from .room import Room, RoomEnvelope, denormalize_entities, normalize_room
from .tokenizer import DEC_SCHEMA, DecToken

log = logging.getLogger(__name__)

MODES = ("joint", "encoder_only", "ddep_only")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    eval_interval: int = 0  # epochs between checkpoints and validation; 0 = only at the end
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    mode: str = "joint"
    grad_clip: float = 1.0  # global gradient-norm bound; 0 disables

    def __post_init__(self):
        if isinstance(self.loss, Mapping):
            self.loss = L.LossConfig.from_dict(self.loss)
        self.betas = tuple(float(b) for b in self.betas)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.eps <= 0 or len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValueError("invalid optimizer settings")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")
        if self.eval_interval < 0:
            raise ValueError("eval_interval must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)  # {"step", "epoch", "loss", <components>}
    epochs: list = field(default_factory=list)  # {"epoch", "mean_loss", optional "val"}
    wall_clock: list = field(default_factory=list)  # seconds per epoch, kept out of the JSONL

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"kind": "step", **rec}, sort_keys=True) + "\n")
            for rec in self.epochs:
                fh.write(json.dumps({"kind": "epoch", **rec}, sort_keys=True) + "\n")


# -- data preparation -----------------------------------------------------------------

@dataclass(frozen=True)
class Prepared:
    room: Room  # normalized
    enc: tok.EncMatrix
    dec: tok.DecMatrix
    descriptor: np.ndarray  # standardized over the prepared set


def prepare(rooms: Sequence[Room], s_enc: int = tok.S_ENC, s_dec: int = tok.S_DEC) -> list[Prepared]:
    normed = [normalize_room(r)[0] for r in rooms]
    desc = L.standardize(L.geom_descriptors([r.envelope for r in normed])) if normed else np.zeros((0, 5))
    return [Prepared(r, tok.encode_envelope(r.envelope, s_enc), tok.encode_entities(r, s_dec), desc[i])
            for i, r in enumerate(normed)]


@dataclass(frozen=True)
class Batch:
    x_enc: np.ndarray
    enc_mask: np.ndarray
    x_dec: np.ndarray
    dec_mask: np.ndarray
    y_dec: np.ndarray
    room_types: np.ndarray
    descriptors: np.ndarray


def make_batch(items: Sequence[Prepared]) -> Batch:
    x_enc, enc_mask = tok.stack_batch([p.enc for p in items])
    s = max(p.dec.n_active for p in items) - 1  # the EOS column is never an input
    x_dec = np.stack([p.dec.inputs()[:, :s] for p in items])
    y_dec = np.stack([p.dec.targets()[:, :s] for p in items])
    dec_mask = x_dec[:, DEC_SCHEMA.offsets["token_type_id"], :] != DEC_SCHEMA.pad_type
    return Batch(x_enc, enc_mask, x_dec, dec_mask, y_dec,
                 np.array([p.room.envelope.room_type for p in items]),
                 np.stack([p.descriptor for p in items]))


# -- losses for one batch ----------------------------------------------------------------

def batch_losses(model: LayoutTransformer, b: Batch, cfg: TrainConfig, rng: np.random.Generator) -> dict:
    lc = cfg.loss
    parts: dict = {}
    mem = model.encode(b.x_enc, b.enc_mask)
    if cfg.mode in ("joint", "ddep_only"):
        out = model.decode(b.x_dec, b.dec_mask, mem, b.enc_mask)
        parts["ddep"] = L.ddep_loss(out, b.y_dec, lc.head_weights)
    if cfg.mode in ("joint", "encoder_only"):
        z = model.pool_cls(mem)
        parts["room"] = L.room_cls_loss(model.room_logits(z), b.room_types)
        parts["mlm"] = L.mlm_loss(model, b.x_enc, b.enc_mask, lc.mlm_rate, rng)
        a, p, n = L.sample_triplets(b.room_types, rng)
        if len(a):
            parts["triplet"] = L.triplet_loss(T.getitem(z, a), T.getitem(z, p), T.getitem(z, n), lc.margin)
        if len(b.room_types) >= 2:
            parts["geom"] = L.geom_preserve_loss(z, b.descriptors)
    for name, v in parts.items():
        if not math.isfinite(v.item()):
            raise TrainingError(f"non-finite {name} loss ({v.item()})")
    return parts


def _trainable(model: LayoutTransformer, mode: str) -> list[T.Tensor]:
    return model.encoder_parameters() if mode == "encoder_only" else model.parameters()


def train(rooms: Sequence[Room], model: LayoutTransformer, cfg: TrainConfig,
          val_rooms: Sequence[Room] = ()) -> tuple[LayoutTransformer, TrainLog]:
    """Adam on the total loss with a seeded shuffle; fully reproducible for fixed inputs."""
    data = prepare(rooms, model.cfg.s_enc, model.cfg.s_dec)
    if not data:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = _trainable(model, cfg.mode)
    opt = T.Adam(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    tlog = TrainLog()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(data))
        totals = []
        for start in range(0, len(order), cfg.batch_size):
            batch = make_batch([data[i] for i in order[start:start + cfg.batch_size]])
            opt.zero_grad()
            parts = batch_losses(model, batch, cfg, rng)
            loss = L.total_loss(parts, cfg.loss)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite total loss at step {step}")
            loss.backward()
            if cfg.grad_clip:
                T.clip_grad_norm(params, cfg.grad_clip)
            opt.step()
            step += 1
            rec = {"step": step, "epoch": epoch, "loss": loss.item()}
            rec.update({k: v.item() for k, v in parts.items()})
            tlog.steps.append(rec)
            totals.append(loss.item())
        tlog.wall_clock.append(time.perf_counter() - t0)
        summary = {"epoch": epoch, "mean_loss": float(np.mean(totals))}
        at_interval = cfg.eval_interval and epoch % cfg.eval_interval == 0
        if at_interval or epoch == cfg.epochs:
            if val_rooms:
                summary["val"] = teacher_forced_report(model, val_rooms)
            if cfg.checkpoint_path:
                save_checkpoint(model, cfg.checkpoint_path, {"epoch": epoch, "step": step})
        tlog.epochs.append(summary)
        log.info("epoch %d  loss %.4f  (%.1fs)", epoch, summary["mean_loss"], tlog.wall_clock[-1])
    if cfg.log_path:
        tlog.write_jsonl(cfg.log_path)
    return model, tlog


# -- evaluation -----------------------------------------------------------------------------

CONTINUOUS = ("t", "delta", "size", "rho")


def teacher_forced_report(model: LayoutTransformer, rooms: Sequence[Room], batch_size: int = 32) -> dict:
    """DDEP losses, entity-category accuracy and continuous MAE with ground-truth prefixes."""
    if not rooms:
        raise TrainingError("empty split")
    data = prepare(rooms, model.cfg.s_enc, model.cfg.s_dec)
    off = DEC_SCHEMA.offsets
    sums = {h: 0.0 for h in L.HEADS}
    correct = n_ent = 0
    abs_err = n_cont = 0.0
    with T.no_grad():
        for start in range(0, len(data), batch_size):
            items = data[start:start + batch_size]
            b = make_batch(items)
            mem = model.encode(b.x_enc, b.enc_mask)
            out = model.decode(b.x_dec, b.dec_mask, mem, b.enc_mask)
            _, parts = L.ddep_loss(out, b.y_dec, return_parts=True)
            for h in L.HEADS:
                sums[h] += parts[h].item() * len(items)
            ttype = b.y_dec[:, off["token_type_id"], :]
            ent = (ttype == DecToken.PROP) | (ttype == DecToken.CASEWORK)
            prop = ttype == DecToken.PROP
            pred_cat = out.category_logits.data.argmax(-1)
            correct += int((pred_cat[ent] == b.y_dec[:, off["entity_category"], :][ent]).sum())
            n_ent += int(ent.sum())
            for pred, rows, active in ((out.t_value.data, DEC_SCHEMA.rows("t"), ent),
                                       (out.delta.data, DEC_SCHEMA.rows("delta"), ent),
                                       (out.size.data, DEC_SCHEMA.rows("size"), ent),
                                       (out.rho.data, DEC_SCHEMA.rows("rho"), prop)):
                target = np.transpose(b.y_dec[:, rows, :], (0, 2, 1))
                err = np.abs(pred - target)[active]
                abs_err += float(err.sum())
                n_cont += err.size
    n = len(data)
    return {
        "n_rooms": n,
        "ddep": {h: sums[h] / n for h in L.HEADS},
        "category_accuracy": correct / n_ent if n_ent else 1.0,
        "continuous_mae": abs_err / n_cont if n_cont else 0.0,
    }


def embed_rooms(model: LayoutTransformer, envelopes: Sequence[RoomEnvelope], batch_size: int = 64) -> np.ndarray:
    """CLS embeddings of normalized envelopes, (N, d)."""
    outs = []
    with T.no_grad():
        for start in range(0, len(envelopes), batch_size):
            chunk = [normalize_room(Room(e))[0].envelope for e in envelopes[start:start + batch_size]]
            x, mask = tok.stack_batch([tok.encode_envelope(e, model.cfg.s_enc) for e in chunk])
            outs.append(model.pool_cls(model.encode(x, mask)).data)
    return np.concatenate(outs) if outs else np.zeros((0, model.cfg.d))


def generate_layouts(model: LayoutTransformer, envelopes: Sequence[RoomEnvelope], mode: str = "greedy",
                     seed: int = 0, batch_size: int = 32) -> tuple[list[list], list[float]]:
    """Entities in the envelopes' own coordinates, plus per-room decode latency (seconds)."""
    layouts, latency = [], []
    for start in range(0, len(envelopes), batch_size):
        chunk = envelopes[start:start + batch_size]
        normed = [normalize_room(Room(e)) for e in chunk]
        t0 = time.perf_counter()
        gen = generate_batch(model, [r.envelope for r, _ in normed], mode=mode, seed=seed + start)
        dt = (time.perf_counter() - t0) / len(chunk)
        for (_, rec), ents in zip(normed, gen):
            layouts.append(list(denormalize_entities(ents, rec)))
            latency.append(dt)
    return layouts, latency


def layout_report(envelopes: Sequence[RoomEnvelope], layouts: Sequence[Sequence], nav: NavConfig = NavConfig(),
                  oc: OCWeights = OCWeights(), latencies: Optional[Sequence[float]] = None) -> dict:
    scores = [score_layout(env, lay, inventory_for(env.room_type), nav, oc) for env, lay in zip(envelopes, layouts)]
    return {"per_room": [s.as_dict() for s in scores], "summary": summarize(scores, latencies)}


def evaluate_checkpoint(model: LayoutTransformer, rooms: Sequence[Room], n_generate: int = 20,
                        seed: int = 0) -> dict:
    if not rooms:
        raise TrainingError("empty split")
    report = {"teacher_forced": teacher_forced_report(model, rooms)}
    envs = [r.envelope for r in rooms[:n_generate]]
    layouts, _ = generate_layouts(model, envs, seed=seed)
    report["generation"] = layout_report(envs, layouts)["summary"]
    if len(rooms) >= 3 and len({r.envelope.room_type for r in rooms}) >= 2:
        report["embedding"] = embedding_report(embed_rooms(model, [r.envelope for r in rooms]), rooms, seed=seed)
    else:
        report["embedding"] = None
    return report


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["betas"] = list(cfg.betas)
    return d


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
