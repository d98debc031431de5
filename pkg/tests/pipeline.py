"""Drive the full CLI pipeline into a directory; shared by the CLI and acceptance tests."""

import json
from pathlib import Path

from roomgen.cli import main

TINY = {
    "model": {"d": 16, "n_layers_enc": 1, "n_layers_dec": 1, "n_heads": 2},
    "train": {"epochs": 2, "batch_size": 8, "lr": 1e-3},
    "retrieval": {"k": 3},
}

ARTIFACTS = ("rooms.jsonl", "tokens.npz", "csv", "model.npz", "train.jsonl", "layouts.jsonl", "svg",
             "layout_report.json", "emb.npz", "retrieve.json", "embed_report.json")


def run(cmd: list, out: Path, seed: int) -> None:
    code = main(["--config", str(out / "config.json"), "--seed", str(seed), *cmd])
    if code != 0:
        raise AssertionError(f"{cmd[0]} exited with {code}")


def run_pipeline(out: Path, seed: int = 0, n_rooms: int = 40) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(TINY))
    rooms = str(out / "rooms.jsonl")
    run(["synth", "--n", str(n_rooms), "--out", rooms], out, seed)
    run(["tokenize", "--rooms", rooms, "--out", str(out / "tokens.npz"), "--csv-dir", str(out / "csv"),
         "--csv-limit", "2"], out, seed)
    run(["train", "--rooms", rooms, "--out", str(out / "model.npz"), "--log", str(out / "train.jsonl")], out, seed)
    run(["generate", "--checkpoint", str(out / "model.npz"), "--rooms", rooms, "--out", str(out / "layouts.jsonl"),
         "--split", "all", "--limit", "6", "--mode", "sampled", "--svg-dir", str(out / "svg")], out, seed)
    run(["eval-layout", "--layouts", str(out / "layouts.jsonl"), "--out", str(out / "layout_report.json")], out, seed)
    run(["embed", "--checkpoint", str(out / "model.npz"), "--rooms", rooms, "--out", str(out / "emb.npz")], out, seed)
    first = json.loads(Path(rooms).read_text().splitlines()[0])["id"]
    run(["retrieve", "--embeddings", str(out / "emb.npz"), "--rooms", rooms, "--query", first,
         "--out", str(out / "retrieve.json")], out, seed)
    run(["eval-embed", "--embeddings", str(out / "emb.npz"), "--rooms", rooms, "--out",
         str(out / "embed_report.json")], out, seed)


def artifact_bytes(out: Path) -> dict:
    files = {}
    for name in ARTIFACTS:
        p = out / name
        for f in sorted(p.rglob("*")) if p.is_dir() else [p]:
            files[str(f.relative_to(out))] = f.read_bytes()
    return files
