"""Drives the command-line pipeline end to end inside a scratch directory."""
import json
from pathlib import Path

from seisbt.cli import main

SMALL_CONFIG = {
    "synth": {"n_events": 16, "stations_per_event": [3, 5]},
    "train": {"epochs": 2, "batch_events": 4, "conv_channels": [4, 4, 8, 8],
              "embedding_dim": 8, "projection_dim": 32, "head_hidden": 16,
              "finetune_steps": 20},
    "analysis": {"n_pairs": 200, "n_trees": 5},
}


def run_pipeline(root: Path, seed: int = 0, config: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMALL_CONFIG if config is None else config))
    run = root / "run"
    steps = [
        ["synth", "--config", cfg, "--out", root / "train_cat", "--seed", seed],
        ["synth", "--config", cfg, "--out", root / "shift_cat", "--seed", seed, "--shifted"],
        ["preprocess", "--config", cfg, "--catalog", root / "train_cat" / "catalog.csv",
         "--out", root / "train.npz"],
        ["preprocess", "--config", cfg, "--catalog", root / "shift_cat" / "catalog.csv",
         "--out", root / "shift.npz"],
        ["train", "--mode", "bt", "--config", cfg, "--data", root / "train.npz", "--out", run,
         "--seed", seed],
        ["embed", "--model", run / "model.bin", "--data", root / "train.npz",
         "--out", run / "embeddings.csv"],
        ["embed", "--model", run / "model.bin", "--data", root / "shift.npz",
         "--out", run / "embeddings_shift.csv"],
        ["analyze", "--config", cfg, "--embeddings", run / "embeddings.csv",
         "--catalog", root / "train_cat" / "catalog.csv", "--out", run, "--seed", seed],
        ["cluster", "--embeddings", run / "embeddings.csv", "--min-cluster-size", 10,
         "--assign", run / "embeddings_shift.csv", "--out", run],
        ["classify", "--config", cfg, "--model", run / "model.bin", "--data", root / "shift.npz",
         "--probe", "--train-data", root / "train.npz", "--clusters", run / "cluster_model.json",
         "--out", run, "--seed", seed],
        ["report", "--run-dir", run],
    ]
    for argv in steps:
        code = main([str(a) for a in argv])
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")
    return run
