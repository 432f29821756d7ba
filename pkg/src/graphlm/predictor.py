"""Graph-constrained next-entity prediction.

The frozen projection head is pooled into a word-level seed for the query
head, propagated over the entity graph by a dedicated GNN (same architecture
as the entity encoder, independent weights), and scored per entity together
with the query-relation vector and the reader's last hidden state. Final
scores average the structural and reader-side scorers, so the prediction
support is always exactly the entity vocabulary of the active graph.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, EntityPropagator, GraphTensors
from .params import ParameterStore
from .tensor import Tensor


class ReaderScorer:
    """sigmoid(MLP([p_i || r_q || g(h_last)])) per entity."""

    def __init__(self, store: ParameterStore, cfg: EncoderConfig, lm_dim: int, seed_rng, prefix="reader_score"):
        d = cfg.hidden_dim
        self.g_w = store.add(f"{prefix}.g_w", seed_rng.normal(0.0, 1.0 / np.sqrt(lm_dim), (lm_dim, d)))
        self.g_b = store.add(f"{prefix}.g_b", seed_rng.normal(0.0, 0.05, d))
        self.w1 = store.add(f"{prefix}.w1", seed_rng.normal(0.0, 1.0 / np.sqrt(3 * d), (3 * d, d)))
        self.b1 = store.add(f"{prefix}.b1", seed_rng.normal(0.0, 0.05, d))
        self.w2 = store.add(f"{prefix}.w2", seed_rng.normal(0.0, 1.0 / np.sqrt(d), (d, 1)))
        self.b2 = store.add(f"{prefix}.b2", seed_rng.normal(0.0, 0.05, 1))

    def logits(self, decoded: Tensor, r_q: Tensor, h_last: Tensor) -> Tensor:
        n = decoded.data.shape[0]
        gh = T.add(T.matmul(h_last, self.g_w.tensor), self.g_b.tensor)
        x = T.concat([decoded, T.repeat_rows(r_q, n), T.repeat_rows(gh, n)], axis=1)
        h = T.relu(T.add(T.matmul(x, self.w1.tensor), self.b1.tensor))
        return T.add(T.matmul(h, self.w2.tensor), self.b2.tensor)

    def scores(self, decoded: Tensor, r_q: Tensor, h_last: Tensor) -> Tensor:
        return T.sigmoid(self.logits(decoded, r_q, h_last))


def decode_projection(
    propagator: EntityPropagator,
    gt: GraphTensors,
    R: Tensor,
    head: int,
    p_head: Tensor,
    edge_mask: np.ndarray | None = None,
) -> Tensor:
    """Spread the pooled projection-head seed of the query head over the graph."""
    return propagator.propagate(gt, R, head, p_head, edge_mask=edge_mask)


def fuse_scores(struct_scores: np.ndarray, reader_scores: np.ndarray) -> np.ndarray:
    a = np.asarray(struct_scores, dtype=np.float64).reshape(-1)
    b = np.asarray(reader_scores, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"score shapes differ: {a.shape} vs {b.shape}")
    return (a + b) / 2.0


def rank_entities(fused: np.ndarray) -> np.ndarray:
    """All entity ids sorted by descending fused score, ties by ascending id."""
    fused = np.asarray(fused, dtype=np.float64).reshape(-1)
    return np.lexsort((np.arange(fused.shape[0]), -fused)).astype(np.int64)
