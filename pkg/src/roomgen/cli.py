"""Command-line pipeline: synth, tokenize, train, generate, eval-layout, embed, retrieve, eval-embed."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import tokenizer as tok
from . import vocab
from .dataset import DatasetError, RoomRecord, SynthConfig, load_records, save_records, synth_records
from .metrics_embedding import EmbeddingMetricError, RelevanceOracle, RetrievalIndex, embedding_report
from .metrics_layout import MetricError, NavConfig, OCWeights
from .model import CheckpointError, LayoutTransformer, ModelConfig, load_checkpoint, schema_fingerprints, write_npz
from .render import write_svg
from .room import Room, normalize_room
from .tensor import ShapeError
from .trainer import (TrainConfig, TrainingError, config_dict, generate_layouts, layout_report, train,
                      write_json)

log = logging.getLogger("roomgen")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_SECTIONS = ("synth", "model", "train", "nav", "oc", "retrieval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- configuration ---------------------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid JSON/YAML") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a mapping of sections")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    for name, sec in cfg.items():
        if not isinstance(sec, dict):
            raise UsageError(f"config section {name!r} must be a mapping")
        if "seed" in sec:
            raise UsageError(f"config section {name!r} sets a seed; use the --seed flag")
    return cfg


def _build(kind, section: dict, **overrides):
    try:
        return kind.from_dict({**section, **overrides}) if hasattr(kind, "from_dict") else kind(**{**section, **overrides})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {kind.__name__}: {exc}") from exc


def resolve(args) -> dict:
    cfg = load_config(args.config)
    seed = args.seed
    resolved = {
        "seed": seed,
        "synth": _build(SynthConfig, cfg.get("synth", {}), seed=seed),
        "model": _build(ModelConfig, cfg.get("model", {}), seed=seed),
        "train": _build(TrainConfig, cfg.get("train", {}), seed=seed),
        "nav": _build(NavConfig, cfg.get("nav", {})),
        "oc": _build(OCWeights, cfg.get("oc", {})),
        "retrieval": dict({"k": 10, "w_entity": 0.5, "threshold": 0.5}, **cfg.get("retrieval", {})),
    }
    if set(resolved["retrieval"]) != {"k", "w_entity", "threshold"}:
        raise UsageError("retrieval section accepts only k, w_entity, threshold")
    return resolved


def _log_config(command: str, resolved: dict) -> None:
    def plain(v):
        if hasattr(v, "__dataclass_fields__"):
            return json.loads(json.dumps(asdict(v), default=str))
        return v
    log.info("resolved config for %s: %s", command,
             json.dumps({k: plain(v) for k, v in resolved.items()}, sort_keys=True, default=str))


# -- helpers -----------------------------------------------------------------------------------

def _select(records: list[RoomRecord], split: str) -> list[RoomRecord]:
    if split == "all":
        return records
    return [r for r in records if r.split == split]


def _require(records, what: str):
    if not records:
        raise DatasetError(f"no rooms selected for {what}")
    return records


def _load_embeddings(path):
    try:
        with np.load(path) as z:
            fps = json.loads(bytes(z["meta"]).decode())["fingerprints"]
            ids, emb = [str(i) for i in z["ids"]], z["embeddings"]
    except (OSError, KeyError, ValueError) as exc:
        raise DatasetError(f"cannot read embeddings {path}: {exc}") from exc
    if fps != schema_fingerprints():
        raise CheckpointError(f"{path}: feature schema fingerprint mismatch")
    return ids, emb


def _rooms_by_id(records: list[RoomRecord], ids: list[str]) -> list[Room]:
    by_id = {r.id: r.room for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DatasetError(f"{len(missing)} embedded room ids not in the rooms file (first: {missing[0]})")
    return [by_id[i] for i in ids]


# -- commands ------------------------------------------------------------------------------------

def cmd_synth(args, rc):
    synth = rc["synth"]
    if args.types:
        names = [t.strip() for t in args.types.split(",") if t.strip()]
        try:
            synth = replace(synth, type_weights={t: 1.0 for t in names})
        except DatasetError as exc:
            raise UsageError(str(exc)) from exc
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    recs = synth_records(synth, args.n)
    save_records(recs, args.out)
    log.info("wrote %d rooms to %s", len(recs), args.out)


def cmd_tokenize(args, rc):
    recs = _require(_select(load_records(args.rooms), args.split), "tokenize")
    normed = [normalize_room(r.room) for r in recs]
    enc = [tok.encode_envelope(n.envelope) for n, _ in normed]
    dec = [tok.encode_entities(n) for n, _ in normed]
    meta = {"fingerprints": schema_fingerprints(), "encoder_rows": list(tok.ENC_SCHEMA.row_names),
            "decoder_rows": list(tok.DEC_SCHEMA.row_names)}
    write_npz(args.out, {
        "ids": np.array([r.id for r in recs]),
        "enc": np.stack([m.values for m in enc]), "enc_mask": np.stack([m.attn_mask for m in enc]),
        "dec": np.stack([m.values for m in dec]), "dec_mask": np.stack([m.attn_mask for m in dec]),
        "scale": np.array([rec.scale for _, rec in normed]),
        "translation": np.array([rec.translation for _, rec in normed]),
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
    })
    if args.csv_dir:
        out = Path(args.csv_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r, e, d in list(zip(recs, enc, dec))[: args.csv_limit]:
            tok.dump_csv(e.values, tok.ENC_SCHEMA, out / f"{r.id}.enc.csv")
            tok.dump_csv(d.values, tok.DEC_SCHEMA, out / f"{r.id}.dec.csv")
    log.info("tokenized %d rooms into %s", len(recs), args.out)


def cmd_train(args, rc):
    records = load_records(args.rooms)
    train_recs = _require(_select(records, "train"), "training")
    val = [r.room for r in _select(records, "val")]
    tcfg = rc["train"]
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    tcfg = replace(tcfg, checkpoint_path=args.out, log_path=args.log)
    model = LayoutTransformer(rc["model"])
    log.info("training %d parameters on %d rooms (%d val)", model.n_parameters(), len(train_recs), len(val))
    _, tlog = train([r.room for r in train_recs], model, tcfg, val_rooms=val)
    log.info("final mean loss %.4f; %.1fs total", tlog.epochs[-1]["mean_loss"], sum(tlog.wall_clock))


def cmd_generate(args, rc):
    model, _ = load_checkpoint(args.checkpoint)
    recs = _require(_select(load_records(args.rooms), args.split), "generation")
    if args.limit is not None:
        recs = recs[: args.limit]
    envs = [r.room.envelope for r in recs]
    layouts, latency = generate_layouts(model, envs, mode=args.mode, seed=rc["seed"])
    out = [RoomRecord(r.id, r.split, r.seed, Room(env, tuple(lay))) for r, env, lay in zip(recs, envs, layouts)]
    save_records(out, args.out)
    if args.latency_out:
        write_json({"ids": [r.id for r in recs], "seconds": latency}, args.latency_out)
    if args.svg_dir:
        d = Path(args.svg_dir)
        d.mkdir(parents=True, exist_ok=True)
        for r in out:
            write_svg(r.room, d / f"{r.id}.svg", title=f"{r.id} ({vocab.ROOM_TYPES[r.room.envelope.room_type]})")
    log.info("generated layouts for %d rooms (%.3fs/room)", len(out), float(np.mean(latency)))


def cmd_eval_layout(args, rc):
    recs = _require(load_records(args.layouts), "evaluation")
    latency = None
    if args.latency:
        lat = json.loads(Path(args.latency).read_text(encoding="utf-8"))
        latency = lat["seconds"]
    envs = [r.room.envelope for r in recs]
    rep = layout_report(envs, [r.room.entities for r in recs], rc["nav"], rc["oc"], latency)
    for r, row in zip(recs, rep["per_room"]):
        row["id"] = r.id
    write_json(rep, args.out)
    s = rep["summary"]
    log.info("coverage %.3f  SR %.3f  DF %.3f  OC %.2f%%", s["coverage"]["mean"], s["sr"]["mean"],
             s["df"]["mean"], s["oc"]["mean"])


def cmd_embed(args, rc):
    from .trainer import embed_rooms
    model, _ = load_checkpoint(args.checkpoint)
    recs = _require(_select(load_records(args.rooms), args.split), "embedding")
    emb = embed_rooms(model, [r.room.envelope for r in recs])
    meta = {"fingerprints": schema_fingerprints(), "checkpoint_config": asdict(model.cfg)}
    write_npz(args.out, {"ids": np.array([r.id for r in recs]), "embeddings": emb,
                         "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)})
    log.info("embedded %d rooms into %s", len(recs), args.out)


def cmd_retrieve(args, rc):
    ids, emb = _load_embeddings(args.embeddings)
    rooms = _rooms_by_id(load_records(args.rooms), ids)
    index = RetrievalIndex.build(emb, rooms)
    pos = {i: n for n, i in enumerate(ids)}
    k = args.k or rc["retrieval"]["k"]
    result = {}
    for q in args.query:
        if q not in pos:
            raise DatasetError(f"query id {q!r} not in the embeddings file")
        result[q] = [{"id": ids[j], "cosine": c, "room_type": vocab.ROOM_TYPES[rooms[j].envelope.room_type]}
                     for j, c in index.neighbors(pos[q], min(k, index.n - 1))]
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_eval_embed(args, rc):
    ids, emb = _load_embeddings(args.embeddings)
    rooms = _rooms_by_id(load_records(args.rooms), ids)
    if len(rooms) < 3:
        raise DatasetError("embedding evaluation needs at least 3 rooms")
    r = rc["retrieval"]
    rep = embedding_report(emb, rooms, k=args.k or r["k"], seed=rc["seed"],
                           oracle=RelevanceOracle(r["w_entity"], r["threshold"]))
    write_json(rep, args.out)
    log.info("triplet %s  NMI %s  nDCG %.3f", rep["triplet"], rep["nmi"], rep["ndcg"])


# -- parser ------------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roomgen", description=__doc__)
    p.add_argument("--config", help="JSON or YAML file with sections " + ", ".join(CONFIG_SECTIONS))
    p.add_argument("--seed", type=int, default=0, help="single source of randomness for every stage")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic room corpus (rooms.jsonl)")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--types", help="comma-separated room types to draw from")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("tokenize", help="dump attribute-feature matrices")
    s.add_argument("--rooms", required=True)
    s.add_argument("--out", required=True, help="npz file")
    s.add_argument("--split", default="all", choices=("train", "val", "test", "all"))
    s.add_argument("--csv-dir")
    s.add_argument("--csv-limit", type=int, default=5)
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("train", help="train on the train split; validates on the val split")
    s.add_argument("--rooms", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="training log (JSONL)")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate layouts for room envelopes")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--rooms", required=True)
    s.add_argument("--out", required=True, help="layouts.jsonl")
    s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    s.add_argument("--mode", default="greedy", choices=("greedy", "sampled"))
    s.add_argument("--limit", type=int)
    s.add_argument("--svg-dir")
    s.add_argument("--latency-out", help="write per-room decode timings (not deterministic)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval-layout", help="Coverage / Nav / SR / DF / OC report")
    s.add_argument("--layouts", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--latency", help="timings written by generate --latency-out")
    s.set_defaults(func=cmd_eval_layout)

    s = sub.add_parser("embed", help="CLS embeddings of room envelopes")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--rooms", required=True)
    s.add_argument("--out", required=True, help="npz file")
    s.add_argument("--split", default="all", choices=("train", "val", "test", "all"))
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("retrieve", help="top-k neighbours for query room ids")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--rooms", required=True)
    s.add_argument("--query", required=True, action="append")
    s.add_argument("--k", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("eval-embed", help="retrieval / clustering / correlation report")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--rooms", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_eval_embed)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        rc = resolve(args)
        _log_config(args.command, rc)
        t0 = time.perf_counter()
        args.func(args, rc)
        log.debug("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return EXIT_OK
    except UsageError as exc:
        print(f"roomgen: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError, ShapeError) as exc:
        print(f"roomgen: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, tok.TokenizerError, MetricError, EmbeddingMetricError,
            OSError, KeyError, ValueError) as exc:
        print(f"roomgen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
