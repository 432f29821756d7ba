"""The bound model: parameter registry plus the per-query forward paths."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import MemoryWeights, run_stack
from .backbone import BackboneConfig, FrozenBackbone, Tokenizer, init_backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import (
    EncoderConfig,
    EncoderState,
    EntityPropagator,
    GraphTensors,
    Memory,
    RelationEncoder,
    StructScorer,
    select_memory,
)
from .graph import (
    KnowledgeGraph,
    QueryTriplet,
    RelationalGraph,
    augment_inverses,
    build_relational_graph,
    inverse_rel,
)
from .instruction import AttributePool, InstructionBuilder, TextCache, load_template
from .params import ParameterStore
from .predictor import ReaderScorer, decode_projection, fuse_scores
from .tensor import Tensor


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    memory_k: int = 50
    exemplars: int = 8
    desc_tokens: int = 32
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            backbone=BackboneConfig(**d["backbone"]),
            encoder=EncoderConfig(**d["encoder"]),
            memory_k=d["memory_k"],
            exemplars=d["exemplars"],
            desc_tokens=d["desc_tokens"],
            seed=d["seed"],
        )


@dataclass
class GraphRuntime:
    """Everything precomputed for a single (augmented) graph."""

    kg: KnowledgeGraph  # inverse-augmented
    relgraph: RelationalGraph
    tensors: GraphTensors
    text: TextCache

    @classmethod
    def prepare(cls, kg_raw: KnowledgeGraph, tokenizer: Tokenizer, desc_tokens: int = 32, dtype=np.float64):
        kg = kg_raw if kg_raw.augmented else augment_inverses(kg_raw)
        relgraph = build_relational_graph(kg)
        return cls(
            kg=kg,
            relgraph=relgraph,
            tensors=GraphTensors(kg, relgraph, dtype=dtype),
            text=TextCache.build(kg, tokenizer, desc_tokens=desc_tokens),
        )

    def training_edge_mask(self, query: QueryTriplet) -> np.ndarray | None:
        """Mask the query edge and its inverse if present in the graph."""
        if query.answer is None:
            return None
        hits = self.tensors.find_edges(query.head, query.rel, query.answer)
        inv = inverse_rel(self.kg, query.rel)
        hits_inv = self.tensors.find_edges(query.answer, inv, query.head)
        idx = np.concatenate([hits, hits_inv])
        if idx.size == 0:
            return None
        return self.tensors.edge_mask(idx)


@dataclass
class QueryForward:
    """All per-query forward products shared by training and evaluation."""

    query: QueryTriplet
    state: EncoderState
    memory: Memory
    h_last: Tensor  # (1, F)
    trace: object
    instruction: object
    struct_logits: Tensor  # (I, 1)
    reader_logits: Tensor  # (I, 1)

    def struct_scores(self) -> np.ndarray:
        return _sigmoid_np(self.struct_logits.data.reshape(-1))

    def reader_scores(self) -> np.ndarray:
        return _sigmoid_np(self.reader_logits.data.reshape(-1))

    def fused_scores(self) -> np.ndarray:
        return fuse_scores(self.struct_scores(), self.reader_scores())


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def corpus_texts(kg: KnowledgeGraph) -> list[str]:
    """Texts the tokenizer vocabulary is built from."""
    texts = [load_template()]
    from .instruction import word_format

    for e in kg.entities:
        texts += [e.name, e.description, word_format(e.name, e.description)]
    for r in kg.relations:
        texts += [r.name, r.description, word_format(r.name, r.description)]
    return texts


def build_tokenizer(kg: KnowledgeGraph, vocab_size: int) -> Tokenizer:
    return Tokenizer.build(corpus_texts(kg), size=vocab_size)


class Reasoner:
    """Frozen LM backbone coordinated with trainable graph modules."""

    def __init__(self, config: ModelConfig, tokenizer: Tokenizer):
        self.config = config
        self.store = ParameterStore()
        self.backbone: FrozenBackbone = init_backbone(config.backbone, tokenizer, self.store)

        d = config.encoder.hidden_dim
        F = config.backbone.hidden_dim
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0x7EA5])))
        self.rel_encoder = RelationEncoder(self.store, config.encoder, rng, prefix="rel_gnn")
        self.ent_encoder = EntityPropagator(self.store, config.encoder, rng, prefix="ent_gnn")
        self.proj_decoder = EntityPropagator(self.store, config.encoder, rng, prefix="proj_gnn")
        self.struct_scorer = StructScorer(self.store, config.encoder, rng, prefix="struct_score")
        self.pool_word = AttributePool(self.store, F, d, rng, prefix="pool_word")
        self.pool_proj = AttributePool(self.store, F, d, rng, prefix="pool_proj")
        self.builder = InstructionBuilder(
            self.store, d, F, rng, exemplars=config.exemplars
        )
        # with no memory the maps never enter the loss, so keep them frozen
        self.mem_weights = MemoryWeights(
            self.store, config.backbone.layers, F, d, rng, trainable=config.memory_k > 0
        )
        self.reader_scorer = ReaderScorer(self.store, config.encoder, F, rng, prefix="reader_score")

    # -- per-query forward pieces ----------------------------------------

    def encode(self, rt: GraphRuntime, query: QueryTriplet, edge_mask=None) -> EncoderState:
        rt.kg.validate_query(query)
        R = self.rel_encoder.encode(rt.tensors, query.rel)
        r_q = T.gather_rows(R, [query.rel])
        E = self.ent_encoder.propagate(rt.tensors, R, query.head, r_q, edge_mask=edge_mask)
        logits = self.struct_scorer.logits(E, r_q)
        return EncoderState(
            query=query, R=R, E=E, r_q=r_q, struct_scores=T.sigmoid(logits), struct_logits=logits
        )

    def build_memory(self, state: EncoderState, k: int | None = None) -> Memory:
        k = self.config.memory_k if k is None else k
        return select_memory(state.struct_scores.data.reshape(-1), state.E, k)

    def read(self, rt: GraphRuntime, query: QueryTriplet, state: EncoderState, memory: Memory):
        """Build the prompt and run the attention stack; returns last hidden state."""
        emb = self.backbone.embedding.tensor
        w_head = self.pool_word.pool(emb, rt.text.entity_word_ids[query.head])
        w_rel = self.pool_word.pool(emb, rt.text.relation_word_ids[query.rel])
        e_head = T.gather_rows(state.E, [query.head])
        instruction = self.builder.build(
            self.backbone,
            rt.text,
            query,
            state.struct_scores.data,
            w_head,
            w_rel,
            e_head,
            state.r_q,
        )
        H, trace = run_stack(instruction.embeddings, memory, self.backbone, self.mem_weights)
        h_last = T.gather_rows(H, [instruction.length - 1])
        return h_last, trace, instruction

    def reader_logits(
        self,
        rt: GraphRuntime,
        query: QueryTriplet,
        state: EncoderState,
        h_last: Tensor,
        edge_mask=None,
        candidates=None,
    ) -> Tensor:
        """Reader-side logits; ``candidates`` restricts scoring to given rows."""
        p_head = self.pool_proj.pool(
            self.backbone.projection.tensor, rt.text.entity_word_ids[query.head]
        )
        decoded = decode_projection(
            self.proj_decoder, rt.tensors, state.R, query.head, p_head, edge_mask=edge_mask
        )
        if candidates is not None:
            decoded = T.gather_rows(decoded, np.asarray(candidates, dtype=np.int64))
        return self.reader_scorer.logits(decoded, state.r_q, h_last)

    def forward_query(
        self, rt: GraphRuntime, query: QueryTriplet, k: int | None = None, edge_mask=None
    ) -> QueryForward:
        state = self.encode(rt, query, edge_mask=edge_mask)
        memory = self.build_memory(state, k)
        h_last, trace, instruction = self.read(rt, query, state, memory)
        r_logits = self.reader_logits(rt, query, state, h_last, edge_mask=edge_mask)
        return QueryForward(
            query=query,
            state=state,
            memory=memory,
            h_last=h_last,
            trace=trace,
            instruction=instruction,
            struct_logits=state.struct_logits,
            reader_logits=r_logits,
        )

    def cast(self, dtype):
        """Switch the whole model between f64 (default) and f32 fast mode."""
        self.store.cast(dtype)
        self.backbone.positions = self.backbone.positions.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.backbone.embedding.data.dtype

    # -- persistence -------------------------------------------------------

    def manifest(self, extra: dict | None = None) -> dict:
        m = {
            "model_config": self.config.to_dict(),
            "vocabulary": [e.hex() for e in self.backbone.tokenizer.entries],
        }
        if extra:
            m.update(extra)
        return m

    def save(self, path, extra_manifest: dict | None = None, optimizer_state: dict | None = None):
        save_checkpoint(path, self.store, self.manifest(extra_manifest), optimizer_state)

    @classmethod
    def load(cls, path):
        arrays, _, manifest, opt_state = load_checkpoint(path)
        config = ModelConfig.from_dict(manifest["model_config"])
        tokenizer = Tokenizer([bytes.fromhex(h) for h in manifest["vocabulary"]])
        model = cls(config, tokenizer)
        if any(a.dtype == np.float32 for a in arrays.values()):
            model.cast(np.float32)
        model.store.load_arrays(arrays)
        return model, manifest, opt_state
