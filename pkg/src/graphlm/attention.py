"""Causal attention layers extended with an entity-memory block.

Each layer concatenates two logit blocks for every row of the hidden
sequence: inner products against the memory entity embeddings (through a
trainable query map) and the usual causally masked token self-attention
(through the frozen backbone weights). One softmax spans both blocks, and
the output mixes memory values (through a trainable value map) with token
values. Memory columns are visible to every row; the causal mask applies
only to the token block. The whole thing is followed by the backbone's
pre-norm residual feed-forward block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import FrozenBackbone
from .encoder import Memory
from .params import ParameterStore
from .tensor import Tensor

_NORM_EPS = 1e-6


class MemoryWeights:
    """Per-layer trainable maps between entity space and the LM width."""

    def __init__(self, store: ParameterStore, layers: int, lm_dim: int, mem_dim: int, seed_rng, trainable=True):
        self.per_layer = []
        scale = 1.0 / np.sqrt(lm_dim)
        for n in range(layers):
            self.per_layer.append(
                {
                    "m_q": store.add(f"memory.layer{n}.m_q", seed_rng.normal(0.0, scale, (lm_dim, mem_dim)), trainable=trainable),
                    "m_v": store.add(f"memory.layer{n}.m_v", seed_rng.normal(0.0, 1.0 / np.sqrt(mem_dim), (mem_dim, lm_dim)), trainable=trainable),
                }
            )

    def __getitem__(self, n):
        return self.per_layer[n]


_MASK_CACHE: dict = {}


def causal_mask(m: int, dtype=np.float64) -> np.ndarray:
    key = (m, np.dtype(dtype).str)
    if key not in _MASK_CACHE:
        mask = np.zeros((m, m), dtype=dtype)
        mask[np.triu_indices(m, k=1)] = -np.inf
        _MASK_CACHE[key] = mask
    return _MASK_CACHE[key]


@dataclass
class AttentionTrace:
    """Last-row attention coefficients per layer."""

    memory_entity_ids: np.ndarray
    memory_scores: np.ndarray
    alphas: list[np.ndarray] = field(default_factory=list)  # token block, length m
    betas: list[np.ndarray] = field(default_factory=list)  # memory block, length K

    def to_records(self) -> list[dict]:
        return [
            {
                "layer": n,
                "alpha": [float(a) for a in alpha],
                "beta": [float(b) for b in beta],
                "memory_entity_ids": [int(i) for i in self.memory_entity_ids],
                "memory_struct_scores": [float(s) for s in self.memory_scores],
            }
            for n, (alpha, beta) in enumerate(zip(self.alphas, self.betas))
        ]


def attention_mix(
    H: Tensor, memory: Memory | None, backbone: FrozenBackbone, layer_idx: int, mem_weights: MemoryWeights | None
):
    """One attention mix (pre-FFN). Returns (output, attention matrix)."""
    m, F = H.data.shape
    layer = backbone.layers[layer_idx]
    scale = 1.0 / np.sqrt(F)

    tok_logits = T.matmul(T.matmul(H, layer["w_q"].tensor), T.transpose(T.matmul(H, layer["w_k"].tensor)))
    tok_logits = T.add(tok_logits, Tensor(causal_mask(m, H.data.dtype)))
    tok_values = T.matmul(H, layer["w_v"].tensor)

    k = memory.size if memory is not None else 0
    if k == 0:
        logits = T.mul(tok_logits, Tensor(np.asarray(scale, dtype=H.data.dtype)))
        A = T.softmax(logits, axis=1)
        return T.matmul(A, tok_values), A

    mw = mem_weights[layer_idx]
    mem_logits = T.matmul(T.matmul(H, mw["m_q"].tensor), T.transpose(memory.embeddings))
    logits = T.mul(T.concat([mem_logits, tok_logits], axis=1), Tensor(np.asarray(scale, dtype=H.data.dtype)))
    A = T.softmax(logits, axis=1)
    values = T.concat([T.matmul(memory.embeddings, mw["m_v"].tensor), tok_values], axis=0)
    return T.matmul(A, values), A


def ffn_block(x: Tensor, backbone: FrozenBackbone, layer_idx: int) -> Tensor:
    """Pre-norm residual feed-forward: x + FFN(rmsnorm(x) * scale)."""
    layer = backbone.layers[layer_idx]
    ms = T.reduce_mean(T.mul(x, x), axis=1, keepdims=True)
    inv = T.powc(T.add(ms, Tensor(np.asarray(_NORM_EPS, dtype=x.data.dtype))), -0.5)
    normed = T.mul(T.mul(x, inv), layer["ffn_norm"].tensor)
    h = T.relu(T.add(T.matmul(normed, layer["ffn_w1"].tensor), layer["ffn_b1"].tensor))
    f = T.add(T.matmul(h, layer["ffn_w2"].tensor), layer["ffn_b2"].tensor)
    return T.add(x, f)


def attention_layer(
    H: Tensor, memory: Memory | None, backbone: FrozenBackbone, layer_idx: int, mem_weights: MemoryWeights | None
):
    """Full layer: memory-augmented attention followed by the FFN block."""
    mixed, A = attention_mix(H, memory, backbone, layer_idx, mem_weights)
    return ffn_block(mixed, backbone, layer_idx), A


def plain_layer(H: Tensor, backbone: FrozenBackbone, layer_idx: int):
    """The memory-free decoder layer, written out independently.

    Serves as the degradation reference for the memory-augmented layer: with
    an empty memory the two must agree bit for bit.
    """
    m, F = H.data.shape
    layer = backbone.layers[layer_idx]
    q = T.matmul(H, layer["w_q"].tensor)
    k = T.matmul(H, layer["w_k"].tensor)
    logits = T.add(T.matmul(q, T.transpose(k)), Tensor(causal_mask(m, H.data.dtype)))
    scaled = T.mul(logits, Tensor(np.asarray(1.0 / np.sqrt(F), dtype=H.data.dtype)))
    A = T.softmax(scaled, axis=1)
    mixed = T.matmul(A, T.matmul(H, layer["w_v"].tensor))
    return ffn_block(mixed, backbone, layer_idx), A


def run_stack(
    T_emb: Tensor,
    memory: Memory | None,
    backbone: FrozenBackbone,
    mem_weights: MemoryWeights | None,
    add_positions: bool = True,
):
    """Run all layers; returns final hidden states and the last-row trace."""
    m = T_emb.data.shape[0]
    H = T_emb
    if add_positions:
        H = T.add(H, Tensor(backbone.positions[:m].astype(T_emb.data.dtype)))
    k = memory.size if memory is not None else 0
    trace = AttentionTrace(
        memory_entity_ids=memory.entity_ids if memory is not None else np.zeros(0, dtype=np.int64),
        memory_scores=memory.scores if memory is not None else np.zeros(0),
    )
    for n in range(backbone.num_layers):
        H, A = attention_layer(H, memory, backbone, n, mem_weights)
        last = A.data[-1]
        trace.betas.append(np.array(last[:k]))
        trace.alphas.append(np.array(last[k:]))
    return H, trace


def last_token_closed_form(
    H_prev: np.ndarray,
    memory_emb: np.ndarray,
    backbone: FrozenBackbone,
    layer_idx: int,
    m_q: np.ndarray,
    m_v: np.ndarray,
) -> np.ndarray:
    """Reference for the last row of one attention mix, written as the
    explicit mixture: h_m = sum_i alpha_i h_i W_V + sum_k beta_k e_k M_V with
    one shared normalizer over token and memory terms.

    Used only as a test oracle against attention_mix.
    """
    layer = backbone.layers[layer_idx]
    F = H_prev.shape[1]
    h_m = H_prev[-1]
    q = h_m @ layer["w_q"].data
    keys = H_prev @ layer["w_k"].data
    tok_scores = (keys @ q) / np.sqrt(F)
    if memory_emb.shape[0]:
        mem_scores = (memory_emb @ (h_m @ m_q)) / np.sqrt(F)
    else:
        mem_scores = np.zeros(0, dtype=H_prev.dtype)
    shift = max(tok_scores.max(), mem_scores.max() if mem_scores.size else -np.inf)
    tok_exp = np.exp(tok_scores - shift)
    mem_exp = np.exp(mem_scores - shift)
    Z = tok_exp.sum() + mem_exp.sum()
    alpha = tok_exp / Z
    beta = mem_exp / Z
    out = alpha @ (H_prev @ layer["w_v"].data)
    if memory_emb.shape[0]:
        out = out + beta @ (memory_emb @ m_v)
    return out
