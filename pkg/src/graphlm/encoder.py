"""Query-conditioned structural encoders.

Both encoders are labeling-trick GNNs: node states start as an indicator of
the query (the query relation for the relation encoder, the query head for
the entity encoder) and are refined by summed DistMult-style messages over
the stored directed edges, with a linear update over [self || aggregate] and
a ReLU. A small MLP scores each entity against the query relation, and the
top-K entities by that score form the attention memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .graph import GraphError, KnowledgeGraph, QueryTriplet, RelationalGraph
from .params import ParameterStore
from .tensor import ConstMatrix, Tensor


@dataclass
class EncoderConfig:
    layers: int = 6
    hidden_dim: int = 64
    message: str = "distmult"
    aggregation: str = "sum"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_dim < 4:
            raise ValueError(f"hidden_dim must be >= 4, got {self.hidden_dim}")
        if self.message != "distmult" or self.aggregation != "sum":
            raise ValueError("only distmult messages with sum aggregation are supported")


class GraphTensors:
    """Constant index structures for message passing over one graph."""

    def __init__(self, kg: KnowledgeGraph, relgraph: RelationalGraph, dtype=np.float64):
        if not kg.augmented:
            raise GraphError("GraphTensors requires an inverse-augmented graph")
        self.kg = kg
        self.relgraph = relgraph
        self.dtype = dtype
        n_rel = kg.num_relations
        n_ent = kg.num_entities

        # dense per-pattern adjacency over relation nodes: A[p][dst, src] = 1
        self.pattern_adj = []
        for p in range(4):
            mat = np.zeros((n_rel, n_rel), dtype=dtype)
            rows = relgraph.edges[relgraph.edges[:, 1] == p]
            if rows.shape[0]:
                mat[rows[:, 2], rows[:, 0]] = 1.0
            self.pattern_adj.append(ConstMatrix(mat))

        edges = kg.triplets
        self.edge_src = edges[:, 0].astype(np.int64)
        self.edge_rel = edges[:, 1].astype(np.int64)
        self.edge_dst = edges[:, 2].astype(np.int64)
        n_edge = edges.shape[0]
        ones = np.ones(n_edge, dtype=dtype)
        eidx = np.arange(n_edge)
        self.agg_by_dst = ConstMatrix(
            sp.csr_matrix((ones, (self.edge_dst, eidx)), shape=(n_ent, n_edge))
        )
        self.scatter_src = ConstMatrix(
            sp.csr_matrix((ones, (self.edge_src, eidx)), shape=(n_ent, n_edge))
        )
        self.scatter_rel = ConstMatrix(
            sp.csr_matrix((ones, (self.edge_rel, eidx)), shape=(n_rel, n_edge))
        )

    def edge_mask(self, excluded: np.ndarray) -> np.ndarray:
        """0/1 column vector silencing the given triplet indices."""
        mask = np.ones((len(self.edge_src), 1), dtype=self.dtype)
        mask[excluded] = 0.0
        return mask

    def find_edges(self, head: int, rel: int, tail: int) -> np.ndarray:
        hit = (self.edge_src == head) & (self.edge_rel == rel) & (self.edge_dst == tail)
        return np.nonzero(hit)[0]


_RMS_EPS = 1e-8


def _rms_rows(x: Tensor) -> Tensor:
    """Row-wise RMS normalization; keeps sum aggregation bounded on hub nodes."""
    ms = T.reduce_mean(T.mul(x, x), axis=1, keepdims=True)
    return T.mul(x, T.powc(T.add(ms, Tensor(np.asarray(_RMS_EPS, dtype=x.data.dtype))), -0.5))


def _indicator_rows(n: int, row: int, vec: Tensor, dtype) -> Tensor:
    """(n, d) tensor equal to ``vec`` at ``row`` and zero elsewhere."""
    d = vec.data.shape[1]
    parts = []
    if row > 0:
        parts.append(Tensor(np.zeros((row, d), dtype=dtype)))
    parts.append(vec)
    if row < n - 1:
        parts.append(Tensor(np.zeros((n - row - 1, d), dtype=dtype)))
    return T.concat(parts, axis=0)


class RelationEncoder:
    """GNN over the relation-interaction graph, conditioned on the query relation."""

    def __init__(self, store: ParameterStore, cfg: EncoderConfig, seed_rng, prefix="rel_gnn"):
        self.cfg = cfg
        d = cfg.hidden_dim
        self.pattern_emb = store.add(f"{prefix}.pattern_emb", seed_rng.normal(0.0, 1.0 / np.sqrt(d), (4, d)))
        self.layers = []
        for s in range(cfg.layers):
            self.layers.append(
                {
                    "w": store.add(f"{prefix}.layer{s}.update_w", seed_rng.normal(0.0, 1.0 / np.sqrt(2 * d), (2 * d, d))),
                    "b": store.add(f"{prefix}.layer{s}.update_b", seed_rng.normal(0.0, 0.05, d)),
                }
            )

    def encode(self, gt: GraphTensors, query_rel: int) -> Tensor:
        n = gt.kg.num_relations
        d = self.cfg.hidden_dim
        if not (0 <= query_rel < n):
            raise GraphError(f"query relation {query_rel} out of range")
        init = np.zeros((n, d), dtype=gt.dtype)
        init[query_rel] = 1.0
        state = Tensor(init)
        for layer in self.layers:
            agg = None
            for p in range(4):
                part = T.mul(
                    T.spmm(gt.pattern_adj[p], state),
                    T.gather_rows(self.pattern_emb.tensor, [p]),
                )
                agg = part if agg is None else T.add(agg, part)
            state = T.relu(
                _rms_rows(
                    T.add(T.matmul(T.concat([state, agg], axis=1), layer["w"].tensor), layer["b"].tensor)
                )
            )
        return state


class EntityPropagator:
    """GNN over the entity graph; also used as the projection-head decoder.

    Per layer, each relation's vector from R is passed through that layer's
    two-layer ReLU MLP before entering the DistMult edge message.
    """

    def __init__(self, store: ParameterStore, cfg: EncoderConfig, seed_rng, prefix="ent_gnn"):
        self.cfg = cfg
        d = cfg.hidden_dim
        scale = 1.0 / np.sqrt(d)
        self.layers = []
        for s in range(cfg.layers):
            self.layers.append(
                {
                    "w": store.add(f"{prefix}.layer{s}.update_w", seed_rng.normal(0.0, 1.0 / np.sqrt(2 * d), (2 * d, d))),
                    "b": store.add(f"{prefix}.layer{s}.update_b", seed_rng.normal(0.0, 0.05, d)),
                    "f_w1": store.add(f"{prefix}.layer{s}.rel_mlp_w1", seed_rng.normal(0.0, scale, (d, d))),
                    "f_b1": store.add(f"{prefix}.layer{s}.rel_mlp_b1", seed_rng.normal(0.0, 0.05, d)),
                    "f_w2": store.add(f"{prefix}.layer{s}.rel_mlp_w2", seed_rng.normal(0.0, scale, (d, d))),
                    "f_b2": store.add(f"{prefix}.layer{s}.rel_mlp_b2", seed_rng.normal(0.0, 0.05, d)),
                }
            )

    def propagate(
        self,
        gt: GraphTensors,
        R: Tensor,
        head: int,
        seed_vec: Tensor,
        edge_mask: np.ndarray | None = None,
    ) -> Tensor:
        n = gt.kg.num_entities
        state = _indicator_rows(n, head, seed_vec, gt.dtype)
        mask_t = Tensor(edge_mask) if edge_mask is not None else None
        for layer in self.layers:
            rel_feat = T.add(
                T.matmul(
                    T.relu(T.add(T.matmul(R, layer["f_w1"].tensor), layer["f_b1"].tensor)),
                    layer["f_w2"].tensor,
                ),
                layer["f_b2"].tensor,
            )
            msg = T.mul(
                T.gather_rows(state, gt.edge_src, scatter=gt.scatter_src),
                T.gather_rows(rel_feat, gt.edge_rel, scatter=gt.scatter_rel),
            )
            if mask_t is not None:
                msg = T.mul(msg, mask_t)
            agg = T.spmm(gt.agg_by_dst, msg)
            state = T.relu(
                _rms_rows(
                    T.add(T.matmul(T.concat([state, agg], axis=1), layer["w"].tensor), layer["b"].tensor)
                )
            )
        return state


class StructScorer:
    """sigmoid(MLP([e_i || r_q])) for every entity."""

    def __init__(self, store: ParameterStore, cfg: EncoderConfig, seed_rng, prefix="struct_score"):
        d = cfg.hidden_dim
        self.w1 = store.add(f"{prefix}.w1", seed_rng.normal(0.0, 1.0 / np.sqrt(2 * d), (2 * d, d)))
        self.b1 = store.add(f"{prefix}.b1", seed_rng.normal(0.0, 0.05, d))
        self.w2 = store.add(f"{prefix}.w2", seed_rng.normal(0.0, 1.0 / np.sqrt(d), (d, 1)))
        self.b2 = store.add(f"{prefix}.b2", seed_rng.normal(0.0, 0.05, 1))

    def logits(self, E: Tensor, r_q: Tensor) -> Tensor:
        n = E.data.shape[0]
        x = T.concat([E, T.repeat_rows(r_q, n)], axis=1)
        h = T.relu(T.add(T.matmul(x, self.w1.tensor), self.b1.tensor))
        return T.add(T.matmul(h, self.w2.tensor), self.b2.tensor)

    def scores(self, E: Tensor, r_q: Tensor) -> Tensor:
        return T.sigmoid(self.logits(E, r_q))


@dataclass
class Memory:
    """Top-K entities by structural score, ties broken by ascending id."""

    entity_ids: np.ndarray
    embeddings: Tensor  # (K, d) rows of E
    scores: np.ndarray

    @property
    def size(self) -> int:
        return int(len(self.entity_ids))


@dataclass
class EncoderState:
    query: QueryTriplet
    R: Tensor  # (2J, d)
    E: Tensor  # (I, d)
    r_q: Tensor  # (1, d)
    struct_scores: Tensor  # (I, 1)
    struct_logits: Tensor  # (I, 1)


def select_memory(scores: np.ndarray, E: Tensor, k: int) -> Memory:
    """Pick the K highest-scoring entities deterministically."""
    if k < 0:
        raise ValueError(f"memory size must be >= 0, got {k}")
    flat = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = flat.shape[0]
    k = min(k, n)
    if k == 0:
        d = E.data.shape[1]
        return Memory(
            entity_ids=np.zeros(0, dtype=np.int64),
            embeddings=Tensor(np.zeros((0, d), dtype=E.data.dtype)),
            scores=np.zeros(0),
        )
    order = np.lexsort((np.arange(n), -flat))
    ids = order[:k].astype(np.int64)
    return Memory(entity_ids=ids, embeddings=T.gather_rows(E, ids), scores=flat[ids])
