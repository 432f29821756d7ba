"""Finite-difference verification of the reverse-mode gradients.

Central differences with a configurable step are compared against the tape's
analytic gradients on small randomized instances: the two structural
encoders, one memory-augmented attention layer, and the full training loss
on a tiny graph. Shared by the test suite and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

import numpy as np

from .backbone import BackboneConfig
from .encoder import EncoderConfig
from .graph import EntityRecord, KnowledgeGraph, QueryTriplet, RelationRecord, augment_inverses
from .model import GraphRuntime, ModelConfig, Reasoner, build_tokenizer
from .tensor import Tensor
from .trainer import query_loss

DEFAULT_EPS = 1e-5
REL_ERR_FLOOR = 1e-5


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_ERR_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def fd_check(loss_fn, leaves: list[Tensor], eps: float = DEFAULT_EPS) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the forward pass from the leaves' current data
    on every call and return a scalar Tensor.
    """
    loss = loss_fn()
    loss.backward()
    analytic = [np.array(l.grad) if l.grad is not None else np.zeros_like(l.data) for l in leaves]

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            num[i] = (up - down) / (2.0 * eps)
        worst = max(worst, max_rel_error(ana.reshape(-1), num))
        for l in leaves:
            l.grad = None
    return worst


def tiny_graph(n_entities: int = 5, n_relations: int = 3, n_triplets: int = 8, seed: int = 0) -> KnowledgeGraph:
    rng = np.random.Generator(np.random.PCG64(seed))
    entities = [EntityRecord(i, f"node{i}", f"tiny item {i}") for i in range(n_entities)]
    relations = [RelationRecord(j, f"tie{j}", f"tiny link {j}", base_id=j) for j in range(n_relations)]
    seen = set()
    while len(seen) < n_triplets:
        seen.add(
            (int(rng.integers(n_entities)), int(rng.integers(n_relations)), int(rng.integers(n_entities)))
        )
    arr = np.asarray(sorted(seen), dtype=np.int64)
    return KnowledgeGraph(entities=entities, relations=relations, triplets=arr)


def tiny_model(seed: int = 0, memory_k: int = 3, gnn_layers: int = 2):
    kg = augment_inverses(tiny_graph(seed=seed))
    config = ModelConfig(
        backbone=BackboneConfig(layers=1, hidden_dim=16, vocab_size=320, seed=seed, max_seq_len=256),
        encoder=EncoderConfig(layers=gnn_layers, hidden_dim=4),
        memory_k=memory_k,
        exemplars=2,
        desc_tokens=4,
        seed=seed,
    )
    tokenizer = build_tokenizer(kg, config.backbone.vocab_size)
    model = Reasoner(config, tokenizer)
    rt = GraphRuntime.prepare(kg, tokenizer, desc_tokens=config.desc_tokens)
    return model, rt


def check_encoders(seed: int = 0, eps: float = DEFAULT_EPS) -> float:
    """Gradients through encode_relations -> encode_entities -> a fixed readout."""
    model, rt = tiny_model(seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    probe = Tensor(rng.standard_normal((rt.kg.num_entities, model.config.encoder.hidden_dim)))
    query = QueryTriplet(head=0, rel=1)

    def loss_fn():
        state = model.encode(rt, query)
        from . import tensor as T

        return T.reduce_sum(T.mul(state.E, probe))

    leaves = [p.tensor for p in model.store.trainable() if p.name.startswith(("rel_gnn", "ent_gnn"))]
    return fd_check(loss_fn, leaves, eps)


def check_attention_layer(seed: int = 0, k: int = 3, m: int = 5, eps: float = DEFAULT_EPS) -> float:
    """Gradients through one memory-augmented layer (memory maps and inputs)."""
    from . import tensor as T
    from .attention import attention_layer
    from .encoder import Memory

    model, _ = tiny_model(seed=seed, memory_k=k)
    F = model.config.backbone.hidden_dim
    d = model.config.encoder.hidden_dim
    rng = np.random.Generator(np.random.PCG64(seed + 2))
    H = Tensor(rng.standard_normal((m, F)), requires_grad=True)
    emb = Tensor(rng.standard_normal((k, d)), requires_grad=True)
    probe = Tensor(rng.standard_normal((m, F)))

    def loss_fn():
        memory = Memory(entity_ids=np.arange(k), embeddings=emb, scores=np.zeros(k))
        out, _ = attention_layer(H, memory, model.backbone, 0, model.mem_weights)
        return T.reduce_sum(T.mul(out, probe))

    leaves = [H, emb, model.mem_weights[0]["m_q"].tensor, model.mem_weights[0]["m_v"].tensor]
    return fd_check(loss_fn, leaves, eps)


def check_full_loss(seed: int = 0, eps: float = DEFAULT_EPS, max_coords: int | None = None) -> float:
    """Gradients of the complete training objective on a 5-entity graph."""
    model, rt = tiny_model(seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed + 3))
    query = QueryTriplet(head=0, rel=1, answer=2)
    negatives = np.asarray([1, 3, 4], dtype=np.int64)

    def loss_fn():
        total, _, _ = query_loss(model, rt, query, negatives, lam=0.5)
        return total

    leaves = [p.tensor for p in model.store.trainable()]
    if max_coords is not None:
        leaves = [l for l in leaves if l.data.size <= max_coords]
    return fd_check(loss_fn, leaves, eps)


def run_all(seed: int = 0) -> dict[str, float]:
    return {
        "encoders": check_encoders(seed=seed),
        "attention_layer": check_attention_layer(seed=seed),
        "full_loss": check_full_loss(seed=seed),
    }
