"""Flat key-value run configuration with file, environment, and flag layers.

Precedence, lowest to highest: built-in defaults, config file, environment
variables prefixed ``GRAPHLM_`` (dashes as underscores, upper-case), then
command-line flags. Unknown file keys are rejected; a duplicated file key
keeps its last value and emits a warning.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

ENV_PREFIX = "GRAPHLM_"


class UsageError(Exception):
    pass


# key -> (type, default, help)
SCHEMA: dict[str, tuple] = {
    "data": (str, "", "dataset directory"),
    "out": (str, "run", "output directory"),
    "checkpoint": (str, "", "checkpoint path (defaults to <out>/best.ckpt)"),
    "dataset-name": (str, "dataset", "dataset label used in manifests and schedules"),
    "seed": (int, 0, "global seed"),
    "epochs": (int, 1, "training epochs"),
    "steps-per-epoch": (int, 500, "optimization steps per epoch"),
    "batch-size": (int, 4, "queries per step"),
    "negatives": (int, 256, "negative samples per query"),
    "kl-weight": (float, 0.5, "weight of the distillation terms"),
    "memory-k": (int, 50, "entity-memory size"),
    "gnn-layers": (int, 6, "layers in each structural GNN"),
    "gnn-dim": (int, 64, "hidden width of the structural GNNs"),
    "lm-layers": (int, 2, "frozen backbone layers"),
    "lm-dim": (int, 128, "frozen backbone width"),
    "vocab-size": (int, 1024, "tokenizer vocabulary budget"),
    "max-seq-len": (int, 512, "prompt length limit"),
    "exemplars": (int, 8, "entities listed in the prompt vocabulary block"),
    "desc-tokens": (int, 32, "description truncation length in tokens"),
    "lr": (float, 5e-4, "learning rate"),
    "warmup-fraction": (float, 0.01, "fraction of updates spent on linear warmup"),
    "accumulation": (int, 4, "micro-steps per optimizer update"),
    "weight-decay": (float, 0.01, "decoupled weight decay"),
    "val-interval": (int, 100, "steps between validation passes (0 disables)"),
    "val-sample": (int, 40, "validation triplets sampled per pass"),
    "protocol": (str, "filtered", "ranking protocol: raw or filtered"),
    "jobs": (int, 1, "parallel evaluation workers"),
    "mode": (str, "f64", "float mode: f64 or f32"),
    "split": (str, "test", "dataset split to evaluate"),
    "shape": (str, "fb-v1", "synthetic dataset shape name"),
    "head": (int, 0, "query head entity id (inspect)"),
    "rel": (int, 0, "query relation id (inspect)"),
    "trace-out": (str, "trace.jsonl", "attention trace output path (inspect)"),
    "predictions-out": (str, "", "top-10 prediction dump path (evaluate)"),
    "flip-neg-sign": (int, 0, "add (rather than subtract) the negative-sample log term"),
}


def _convert(key: str, raw: str):
    typ = SCHEMA[key][0]
    try:
        return typ(raw)
    except ValueError as e:
        raise UsageError(f"value for key {key!r} is not a {typ.__name__}: {raw!r}") from e


def read_config_file(path) -> dict:
    """Parse ``key value`` lines; later duplicates win with a warning."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 1)
        if len(parts) != 2:
            raise UsageError(f"{path}:{lineno}: expected 'key value', got {stripped!r}")
        key, raw = parts
        if key not in SCHEMA:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            print(f"warning: {path}:{lineno}: duplicate key {key!r}, last value wins", file=sys.stderr)
        values[key] = _convert(key, raw)
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for key in SCHEMA:
        env_key = ENV_PREFIX + key.replace("-", "_").upper()
        if env_key in environ:
            values[key] = _convert(key, environ[env_key])
    return values


def resolve_config(config_file=None, flag_values: dict | None = None, environ=None):
    """Merge all layers; returns (values, explicitly-set keys)."""
    values = {key: default for key, (_, default, _) in SCHEMA.items()}
    provided: set[str] = set()
    for layer in (
        read_config_file(config_file) if config_file else {},
        env_overrides(environ),
        {k: v for k, v in (flag_values or {}).items() if v is not None},
    ):
        for key, val in layer.items():
            if key not in SCHEMA:
                raise UsageError(f"unknown key {key!r}")
            values[key] = val
            provided.add(key)
    if values["protocol"] not in ("raw", "filtered"):
        raise UsageError(f"protocol must be raw or filtered, got {values['protocol']!r}")
    if values["mode"] not in ("f64", "f32"):
        raise UsageError(f"mode must be f64 or f32, got {values['mode']!r}")
    return values, provided
