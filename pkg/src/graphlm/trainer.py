"""Negative sampling, the mutual-distillation objective, and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, Tokenizer
from .checkpoint import config_hash, content_hash
from .encoder import EncoderConfig
from .graph import GraphError, KnowledgeGraph, QueryTriplet, augment_inverses, inverse_rel
from .model import GraphRuntime, ModelConfig, Reasoner, build_tokenizer
from .optim import AdamW, OptimizerConfig
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(Exception):
    """Raised when the loss stops being finite; carries a state snapshot."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass
class LossBreakdown:
    bce_reader: float
    bce_struct: float
    kl_struct_to_reader: float
    kl_reader_to_struct: float
    lam: float

    @property
    def total(self) -> float:
        return (1.0 - self.lam) * (self.bce_reader + self.bce_struct) + self.lam * (
            self.kl_struct_to_reader + self.kl_reader_to_struct
        )

    def as_log_dict(self) -> dict:
        return {
            "total": self.total,
            "bce_struct": self.bce_struct,
            "bce_krlm": self.bce_reader,
            "kl_s2k": self.kl_struct_to_reader,
            "kl_k2s": self.kl_reader_to_struct,
        }


@dataclass
class TrainConfig:
    epochs: int = 1
    steps_per_epoch: int = 500
    batch_size: int = 4
    negatives: int = 256
    kl_weight: float = 0.5
    memory_k: int = 50
    gnn_layers: int = 6
    gnn_dim: int = 64
    lm_layers: int = 2
    lm_dim: int = 128
    vocab_size: int = 1024
    max_seq_len: int = 512
    exemplars: int = 8
    desc_tokens: int = 32
    seed: int = 0
    mode: str = "e2e"  # pretrain | finetune | e2e
    lr: float = 5e-4
    warmup_fraction: float = 0.01
    accumulation: int = 4
    weight_decay: float = 0.01
    val_interval: int = 100
    val_sample: int = 40
    flip_neg_sign: bool = False  # add (not subtract) the negative log term
    float_mode: str = "f64"  # f64 | f32

    def __post_init__(self):
        if not (0.0 <= self.kl_weight <= 1.0):
            raise ValueError(f"kl_weight must lie in [0, 1], got {self.kl_weight}")
        for name in ("epochs", "batch_size", "negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.steps_per_epoch < 0:
            raise ValueError("steps_per_epoch must be >= 0")
        if self.mode not in ("pretrain", "finetune", "e2e"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            backbone=BackboneConfig(
                layers=self.lm_layers,
                hidden_dim=self.lm_dim,
                vocab_size=self.vocab_size,
                seed=self.seed,
                max_seq_len=self.max_seq_len,
            ),
            encoder=EncoderConfig(layers=self.gnn_layers, hidden_dim=self.gnn_dim),
            memory_k=self.memory_k,
            exemplars=self.exemplars,
            desc_tokens=self.desc_tokens,
            seed=self.seed,
        )


# fine-tuning epoch schedule per dataset (training runs over all triplets)
FINETUNE_EPOCHS = {
    "fb-v1": 3, "fb-v2": 3, "fb-v3": 5, "fb-v4": 5,
    "nell-v1": 3, "nell-v2": 3, "nell-v3": 5, "nell-v4": 3,
    "wn-v1": 3, "wn-v2": 5, "wn-v3": 5, "wn-v4": 3,
    "fb-25": 10, "fb-50": 10, "fb-75": 10, "fb-100": 10,
    "nl-0": 3, "nl-25": 5, "nl-50": 5, "nl-75": 5, "nl-100": 3,
    "wk-25": 10, "wk-50": 10, "wk-75": 10, "wk-100": 10,
}
E2E_EPOCHS = 10


def sample_negatives(query: QueryTriplet, kg: KnowledgeGraph, n: int, rng) -> np.ndarray:
    """n entities drawn uniformly without replacement from everything but the answer."""
    if n < 1:
        raise ValueError(f"need at least one negative, got {n}")
    if kg.num_entities < 2:
        raise GraphError("cannot sample negatives from a single-entity graph")
    if query.answer is None:
        raise ValueError("negative sampling needs a ground-truth answer")
    pool = np.delete(np.arange(kg.num_entities, dtype=np.int64), query.answer)
    if pool.shape[0] < n:
        log.warning(
            "entity pool (%d) smaller than requested negatives (%d); sampling with replacement",
            pool.shape[0], n,
        )
        return rng.choice(pool, size=n, replace=True)
    return rng.choice(pool, size=n, replace=False)


def compute_loss(
    struct_logits: Tensor,
    reader_logits: Tensor,
    lam: float,
    struct_ids=None,
    reader_ids=None,
    flip_neg_sign: bool = False,
):
    """Mutual-distillation objective over one positive (index 0) plus negatives.

    Each side contributes a binary cross-entropy term; the KL terms couple the
    two score distributions (softmax over the raw candidate logits) in both
    directions. With ``flip_neg_sign`` the negative-sample log term is added
    instead of subtracted (kept for auditing that variant only).

    Returns (scalar loss Tensor, LossBreakdown).
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    if struct_logits.data.shape != reader_logits.data.shape:
        raise ValueError("candidate lists of the two scorers differ in length")
    if struct_ids is not None and reader_ids is not None:
        if not np.array_equal(np.asarray(struct_ids), np.asarray(reader_ids)):
            raise ValueError("candidate lists of the two scorers differ")
    c = struct_logits.data.shape[0]
    if c < 2:
        raise ValueError("need one positive and at least one negative")

    dtype = struct_logits.data.dtype
    one = Tensor(np.asarray(1.0, dtype=dtype))
    neg_sign = 1.0 if flip_neg_sign else -1.0

    def bce(logits):
        s = T.sigmoid(logits)
        pos = T.gather_rows(s, [0])
        neg = T.gather_rows(s, np.arange(1, c))
        term_pos = T.mul(T.reduce_sum(T.log(pos)), Tensor(np.asarray(-1.0, dtype=dtype)))
        term_neg = T.mul(T.reduce_mean(T.log(T.sub(one, neg))), Tensor(np.asarray(neg_sign, dtype=dtype)))
        return T.add(term_pos, term_neg)

    def kl(p_logits, q_logits):
        p = T.softmax(T.reshape(p_logits, (1, c)), axis=1)
        q = T.softmax(T.reshape(q_logits, (1, c)), axis=1)
        return T.reduce_sum(T.mul(p, T.sub(T.log(p), T.log(q))))

    bce_struct = bce(struct_logits)
    bce_reader = bce(reader_logits)
    kl_s2r = kl(struct_logits, reader_logits)
    kl_r2s = kl(reader_logits, struct_logits)

    lam_t = Tensor(np.asarray(lam, dtype=dtype))
    one_minus = Tensor(np.asarray(1.0 - lam, dtype=dtype))
    total = T.add(
        T.mul(one_minus, T.add(bce_reader, bce_struct)),
        T.mul(lam_t, T.add(kl_s2r, kl_r2s)),
    )
    parts = LossBreakdown(
        bce_reader=bce_reader.item(),
        bce_struct=bce_struct.item(),
        kl_struct_to_reader=kl_s2r.item(),
        kl_reader_to_struct=kl_r2s.item(),
        lam=lam,
    )
    return total, parts


def query_loss(
    model: Reasoner,
    rt: GraphRuntime,
    query: QueryTriplet,
    negatives: np.ndarray,
    lam: float,
    flip_neg_sign: bool = False,
):
    """Forward one training query (its own edge masked out) and score candidates."""
    edge_mask = rt.training_edge_mask(query)
    candidates = np.concatenate([[query.answer], negatives]).astype(np.int64)
    state = model.encode(rt, query, edge_mask=edge_mask)
    memory = model.build_memory(state)
    h_last, trace, instruction = model.read(rt, query, state, memory)
    s_logits = T.gather_rows(state.struct_logits, candidates)
    r_logits = model.reader_logits(
        rt, query, state, h_last, edge_mask=edge_mask, candidates=candidates
    )
    total, parts = compute_loss(
        s_logits, r_logits, lam, struct_ids=candidates, reader_ids=candidates,
        flip_neg_sign=flip_neg_sign,
    )
    aux = {"state": state, "memory": memory, "trace": trace, "instruction": instruction}
    return total, parts, aux


def directed_query_pool(kg: KnowledgeGraph, triplets: np.ndarray) -> list[QueryTriplet]:
    """Both prediction directions of every triplet."""
    pool = []
    for h, r, t in triplets:
        pool.append(QueryTriplet(int(h), int(r), int(t)))
        pool.append(QueryTriplet(int(t), inverse_rel(kg, int(r)), int(h)))
    return pool


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    metrics_path: Path
    steps: int
    best_val_mrr: float
    loss_history: list = field(default_factory=list)


def train(
    cfg: TrainConfig,
    train_kg: KnowledgeGraph,
    valid_queries: list[QueryTriplet],
    out_dir,
    dataset_name: str = "dataset",
    source_checkpoint=None,
    input_hash: str = "",
    tokenizer: Tokenizer | None = None,
) -> TrainResult:
    """Run the optimization loop and persist checkpoints plus a metrics log.

    One step draws ``batch_size`` directed queries, averages their losses,
    and feeds gradients to the accumulating optimizer. Validation MRR (fused
    scores, filtered protocol, subsampled) decides the best checkpoint.
    """
    from .evaluator import known_answer_index, rank_directed_queries

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    kg_aug = train_kg if train_kg.augmented else augment_inverses(train_kg)
    source_hash = None
    if cfg.mode == "finetune":
        if source_checkpoint is None:
            raise ValueError("finetune mode needs a source checkpoint")
        model, _, _ = Reasoner.load(source_checkpoint)
        tokenizer = model.backbone.tokenizer
        source_hash = content_hash([source_checkpoint])
    else:
        if tokenizer is None:
            tokenizer = build_tokenizer(kg_aug, cfg.vocab_size)
        model = Reasoner(cfg.model_config(), tokenizer)

    dtype = np.float64 if cfg.float_mode == "f64" else np.float32
    if dtype is np.float32:
        model.cast(dtype)
    rt = GraphRuntime.prepare(kg_aug, tokenizer, desc_tokens=cfg.desc_tokens, dtype=dtype)

    total_steps = cfg.epochs * cfg.steps_per_epoch
    opt = AdamW(
        model.store,
        OptimizerConfig(
            lr=cfg.lr,
            weight_decay=cfg.weight_decay,
            warmup_fraction=cfg.warmup_fraction,
            total_steps=total_steps,
            accumulation=cfg.accumulation,
        ),
    )

    seeds = np.random.SeedSequence([cfg.seed, 0x52EED])
    batch_rng, neg_rng, val_rng = [np.random.Generator(np.random.PCG64(s)) for s in seeds.spawn(3)]

    pool = directed_query_pool(rt.kg, rt.kg.triplets[rt.kg.triplets[:, 1] < rt.kg.num_relations // 2])
    if not pool:
        raise GraphError("training graph has no triplets to sample queries from")
    known = known_answer_index([rt.kg.triplets], valid_queries, rt.kg)

    frozen_before = model.store.frozen_checksum()
    metrics_path = out_dir / "metrics.jsonl"
    manifest = model.manifest(
        {
            "train_config": asdict(cfg),
            "config_hash": config_hash({"train": asdict(cfg), "model": model.config.to_dict()}),
            "seed": cfg.seed,
            "dataset": dataset_name,
            "input_hash": input_hash,
            "source_checkpoint": str(source_checkpoint) if source_checkpoint else None,
            "source_checkpoint_hash": source_hash,
            "validation_metric": "fused_mrr_filtered",
        }
    )
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    best_val = -1.0
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    loss_history = []
    step = 0

    def validate() -> float:
        if not valid_queries:
            return float("nan")
        sub = valid_queries
        if len(sub) > cfg.val_sample:
            idx = val_rng.choice(len(sub), size=cfg.val_sample, replace=False)
            sub = [sub[i] for i in sorted(idx)]
        directed = directed_query_pool(rt.kg, np.asarray([[q.head, q.rel, q.answer] for q in sub]))
        metrics, _ = rank_directed_queries(model, rt, directed, protocol="filtered", known=known)
        return metrics.mrr

    with open(metrics_path, "w") as mf:
        for step in range(1, total_steps + 1):
            picks = batch_rng.integers(0, len(pool), size=cfg.batch_size)
            model.store.zero_grad()
            batch_parts = []
            # one backward per query keeps a single tape in memory at a time;
            # leaf gradients accumulate to the batch-mean gradient
            inv_b = Tensor(np.asarray(1.0 / cfg.batch_size, dtype=dtype))
            for qi in picks:
                q = pool[int(qi)]
                negs = sample_negatives(q, rt.kg, cfg.negatives, neg_rng)
                total, parts, _ = query_loss(model, rt, q, negs, cfg.kl_weight, cfg.flip_neg_sign)
                batch_parts.append(parts)
                if not np.isfinite(total.item()):
                    snapshot = {
                        "step": step,
                        "query": [q.head, q.rel, q.answer],
                        "parts": parts.as_log_dict(),
                    }
                    (out_dir / "divergence.json").write_text(json.dumps(snapshot, indent=2))
                    raise TrainingDiverged(f"non-finite loss at step {step}", snapshot)
                T.mul(total, inv_b).backward()

            opt.step(model.store.collect_grads())

            mean_parts = {
                key: float(np.mean([p.as_log_dict()[key] for p in batch_parts]))
                for key in ("total", "bce_struct", "bce_krlm", "kl_s2k", "kl_k2s")
            }
            loss_history.append(mean_parts["total"])
            mf.write(json.dumps({"step": step, "loss": mean_parts, "lr": opt.current_lr()}, sort_keys=True) + "\n")

            if cfg.val_interval > 0 and (step % cfg.val_interval == 0 or step == total_steps):
                val_mrr = validate()
                mf.write(json.dumps({"step": step, "val_mrr": val_mrr}, sort_keys=True) + "\n")
                log.info("step %d loss %.4f val_mrr %.4f", step, mean_parts["total"], val_mrr)
                if np.isnan(val_mrr) or val_mrr >= best_val:
                    best_val = 0.0 if np.isnan(val_mrr) else val_mrr
                    model.save(best_path, manifest, opt.state())

    if model.store.frozen_checksum() != frozen_before:
        raise RuntimeError("frozen parameters changed during training")

    model.save(last_path, manifest, opt.state())
    if not best_path.exists():
        model.save(best_path, manifest, opt.state())
    return TrainResult(
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        metrics_path=metrics_path,
        steps=step,
        best_val_mrr=best_val,
        loss_history=loss_history,
    )
