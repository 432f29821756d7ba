"""Command-line entry point.

Subcommands: synth-data, prepare, pretrain, finetune, train-e2e, evaluate,
inspect, gradcheck. Exit codes: 0 success, 2 usage error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import SCHEMA, UsageError, resolve_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", default=None, help="flat key-value config file")
    for key, (typ, _, help_text) in SCHEMA.items():
        parser.add_argument(f"--{key}", type=typ, default=None, help=help_text, dest=key)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphlm")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth-data", "generate a synthetic benchmark dataset"),
        ("prepare", "validate, augment, and cache a dataset"),
        ("pretrain", "train from scratch (pre-training schedule)"),
        ("finetune", "continue training from a checkpoint"),
        ("train-e2e", "train from scratch on a single dataset"),
        ("evaluate", "ranking evaluation of a checkpoint"),
        ("inspect", "export an attention trace for one query"),
        ("gradcheck", "finite-difference verification of gradients"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_flags(p)
    return parser


def _resolved(args) -> tuple[dict, set]:
    flag_values = {key: getattr(args, key) for key in SCHEMA}
    return resolve_config(args.config, flag_values)


def _train_config(cfg: dict, mode: str):
    from .trainer import TrainConfig

    return TrainConfig(
        epochs=cfg["epochs"],
        steps_per_epoch=cfg["steps-per-epoch"],
        batch_size=cfg["batch-size"],
        negatives=cfg["negatives"],
        kl_weight=cfg["kl-weight"],
        memory_k=cfg["memory-k"],
        gnn_layers=cfg["gnn-layers"],
        gnn_dim=cfg["gnn-dim"],
        lm_layers=cfg["lm-layers"],
        lm_dim=cfg["lm-dim"],
        vocab_size=cfg["vocab-size"],
        max_seq_len=cfg["max-seq-len"],
        exemplars=cfg["exemplars"],
        desc_tokens=cfg["desc-tokens"],
        seed=cfg["seed"],
        mode=mode,
        lr=cfg["lr"],
        warmup_fraction=cfg["warmup-fraction"],
        accumulation=cfg["accumulation"],
        weight_decay=cfg["weight-decay"],
        val_interval=cfg["val-interval"],
        val_sample=cfg["val-sample"],
        flip_neg_sign=bool(cfg["flip-neg-sign"]),
        float_mode=cfg["mode"],
    )


def cmd_synth_data(cfg: dict, provided: set) -> int:
    from .datasets import SHAPES, generate_dataset

    if cfg["shape"] not in SHAPES:
        raise UsageError(f"unknown shape {cfg['shape']!r}; known: {sorted(SHAPES)}")
    root = generate_dataset(cfg["data"] or "data", SHAPES[cfg["shape"]], seed=cfg["seed"])
    print(f"wrote {cfg['shape']} dataset to {root}")
    return EXIT_OK


def cmd_prepare(cfg: dict, provided: set) -> int:
    from .checkpoint import content_hash
    from .datasets import dataset_files, load_split
    from .graph import augment_inverses, build_relational_graph
    from .model import build_tokenizer

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report = {"input_hash": content_hash(dataset_files(cfg["data"])), "splits": {}}
    tokenizer = None
    for split in ("train", "test"):
        kg, queries = load_split(cfg["data"], split)
        aug = augment_inverses(kg)
        relgraph = build_relational_graph(aug)
        if split == "train":
            tokenizer = build_tokenizer(aug, cfg["vocab-size"])
            tokenizer.save(out / "vocab.tsv")
        report["splits"][split] = {
            "entities": kg.num_entities,
            "relations": kg.num_relations,
            "triplets": kg.num_triplets,
            "queries": len(queries),
            "duplicates_dropped": kg.meta.get("duplicates", 0),
            "augmented_relations": aug.num_relations,
            "augmented_triplets": aug.num_triplets,
            "relational_edges": relgraph.num_edges,
        }
    (out / "prepared.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _default_epochs(mode: str, dataset_name: str) -> int:
    from .trainer import E2E_EPOCHS, FINETUNE_EPOCHS

    if mode == "finetune":
        return FINETUNE_EPOCHS.get(dataset_name, 3)
    if mode == "e2e":
        return E2E_EPOCHS
    return 20


def cmd_train(cfg: dict, provided: set, mode: str) -> int:
    from .backbone import Tokenizer
    from .checkpoint import content_hash
    from .datasets import dataset_files, load_split
    from .trainer import train

    if "epochs" not in provided:
        cfg = dict(cfg, **{"epochs": _default_epochs(mode, cfg["dataset-name"])})
    train_kg, valid_queries = load_split(cfg["data"], "train")
    out = Path(cfg["out"])
    vocab_path = out / "vocab.tsv"
    tokenizer = Tokenizer.load(vocab_path) if vocab_path.exists() else None
    source = cfg["checkpoint"] or None
    if mode == "finetune" and source is None:
        raise UsageError("finetune requires --checkpoint")
    result = train(
        _train_config(cfg, mode),
        train_kg,
        valid_queries,
        out,
        dataset_name=cfg["dataset-name"],
        source_checkpoint=source,
        input_hash=content_hash(dataset_files(cfg["data"])),
        tokenizer=tokenizer,
    )
    print(
        json.dumps(
            {
                "best_checkpoint": str(result.best_checkpoint),
                "last_checkpoint": str(result.last_checkpoint),
                "steps": result.steps,
                "best_val_mrr": result.best_val_mrr,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_evaluate(cfg: dict, provided: set) -> int:
    from .datasets import load_split
    from .evaluator import directed_test_queries, dump_predictions, evaluate_dataset
    from .model import GraphRuntime, Reasoner

    ckpt = cfg["checkpoint"] or str(Path(cfg["out"]) / "best.ckpt")
    model, _, _ = Reasoner.load(ckpt)
    kg, queries = load_split(cfg["data"], cfg["split"])
    rt = GraphRuntime.prepare(kg, model.backbone.tokenizer, desc_tokens=cfg["desc-tokens"], dtype=model.dtype)
    metrics = evaluate_dataset(
        model,
        rt,
        queries,
        dataset_name=cfg["dataset-name"],
        protocol=cfg["protocol"],
        jobs=cfg["jobs"],
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    (out / "metrics.json").write_text(payload)
    if cfg["predictions-out"]:
        dump_predictions(model, rt, directed_test_queries(rt.kg, queries), cfg["predictions-out"])
    print(payload, end="")
    return EXIT_OK


def cmd_inspect(cfg: dict, provided: set) -> int:
    from .datasets import load_split
    from .evaluator import export_attention
    from .graph import QueryTriplet
    from .model import GraphRuntime, Reasoner

    ckpt = cfg["checkpoint"] or str(Path(cfg["out"]) / "best.ckpt")
    model, _, _ = Reasoner.load(ckpt)
    kg, _ = load_split(cfg["data"], cfg["split"])
    rt = GraphRuntime.prepare(kg, model.backbone.tokenizer, desc_tokens=cfg["desc-tokens"], dtype=model.dtype)
    records = export_attention(model, rt, QueryTriplet(cfg["head"], cfg["rel"]), cfg["trace-out"])
    print(f"wrote {len(records)} layer traces to {cfg['trace-out']}")
    return EXIT_OK


def cmd_gradcheck(cfg: dict, provided: set) -> int:
    from .gradcheck import run_all

    errors = run_all(seed=cfg["seed"])
    print(json.dumps(errors, indent=2, sort_keys=True))
    if any(v >= 1e-4 for v in errors.values()):
        print("gradient check FAILED (tolerance 1e-4)", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradient check passed (tolerance 1e-4)")
    return EXIT_OK


def main(argv=None) -> int:
    from .graph import GraphError
    from .trainer import TrainingDiverged

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, provided = _resolved(args)
        if args.command == "synth-data":
            return cmd_synth_data(cfg, provided)
        if args.command == "prepare":
            return cmd_prepare(cfg, provided)
        if args.command == "pretrain":
            return cmd_train(cfg, provided, "pretrain")
        if args.command == "finetune":
            return cmd_train(cfg, provided, "finetune")
        if args.command == "train-e2e":
            return cmd_train(cfg, provided, "e2e")
        if args.command == "evaluate":
            return cmd_evaluate(cfg, provided)
        if args.command == "inspect":
            return cmd_inspect(cfg, provided)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, provided)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
