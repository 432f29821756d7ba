"""Prompt assembly: attribute-pooled word embeddings and slot substitution.

The prompt is rendered from a versioned template. Its vocabulary block lists
the highest-scoring entities for the current query (name plus a truncated
description) followed by the query head and relation themselves. Four slot
placeholders are then replaced, in embedding space, by up-projected
word-level and structural vectors of the query head and relation; the prompt
always ends with the word-level head/relation pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import tensor as T
from .backbone import (
    SLOT_STRUCT_HEAD,
    SLOT_STRUCT_REL,
    SLOT_WORD_HEAD,
    SLOT_WORD_REL,
    FrozenBackbone,
    Tokenizer,
)
from .graph import KnowledgeGraph, QueryTriplet
from .params import ParameterStore
from .tensor import Tensor

TEMPLATE_VERSION = "prompt_v1"


class InstructionError(Exception):
    pass


def load_template(version: str = TEMPLATE_VERSION) -> str:
    text = resources.files("graphlm.templates").joinpath(f"{version}.txt").read_text("utf-8")
    return text.rstrip("\n")


def word_format(name: str, description: str) -> str:
    return f"<{name}: {description}>" if description else f"<{name}>"


class AttributePool:
    """mean/max/min/std pooling of projected token embeddings, linearly fused."""

    def __init__(self, store: ParameterStore, table_dim: int, out_dim: int, seed_rng, prefix: str):
        self.w_down = store.add(
            f"{prefix}.w_down", seed_rng.normal(0.0, 1.0 / np.sqrt(table_dim), (table_dim, out_dim))
        )
        self.w_fusion = store.add(
            f"{prefix}.w_fusion", seed_rng.normal(0.0, 1.0 / np.sqrt(4 * out_dim), (4 * out_dim, out_dim))
        )

    def pool(self, table: Tensor, token_ids) -> Tensor:
        """(1, d) pooled embedding of the table rows selected by token_ids."""
        if len(token_ids) == 0:
            raise InstructionError("cannot pool an empty token sequence")
        rows = T.gather_rows(table, np.asarray(token_ids, dtype=np.int64))
        proj = T.matmul(rows, self.w_down.tensor)
        attrs = T.concat(
            [
                T.reduce_mean(proj, axis=0),
                T.reduce_max(proj, axis=0),
                T.reduce_min(proj, axis=0),
                T.std_cols(proj),
            ],
            axis=0,
        )
        return T.matmul(T.reshape(attrs, (1, -1)), self.w_fusion.tensor)


@dataclass
class TextCache:
    """Tokenized names, truncated descriptions, and word formats per id."""

    entity_word_ids: list[list[int]]
    entity_name_ids: list[list[int]]
    entity_desc_ids: list[list[int]]
    relation_word_ids: list[list[int]]
    relation_name_ids: list[list[int]]
    relation_desc_ids: list[list[int]]

    @classmethod
    def build(cls, kg: KnowledgeGraph, tokenizer: Tokenizer, desc_tokens: int = 32) -> "TextCache":
        def prep(records):
            word, name, desc = [], [], []
            for rec in records:
                word.append(tokenizer.tokenize(word_format(rec.name, rec.description)))
                name.append(tokenizer.tokenize(rec.name))
                desc.append(tokenizer.tokenize(rec.description)[:desc_tokens])
            return word, name, desc

        ew, en, ed = prep(kg.entities)
        rw, rn, rd = prep(kg.relations)
        return cls(ew, en, ed, rw, rn, rd)


@dataclass
class KrlInstruction:
    token_ids: list[int]
    slots: dict  # slot name -> list of positions
    embeddings: Tensor  # (m, F)

    @property
    def length(self) -> int:
        return len(self.token_ids)


class InstructionBuilder:
    """Renders the template and substitutes the four query slots."""

    def __init__(
        self,
        store: ParameterStore,
        hidden_dim: int,
        lm_dim: int,
        seed_rng,
        exemplars: int = 8,
        template_version: str = TEMPLATE_VERSION,
    ):
        self.exemplars = exemplars
        self.template_version = template_version
        template = load_template(template_version)
        if "{vocabulary}" not in template:
            raise InstructionError(f"template {template_version} lacks a vocabulary block")
        self.prefix_text, self.suffix_text = template.split("{vocabulary}", 1)
        scale = 1.0 / np.sqrt(hidden_dim)
        self.map_word = store.add("prompt.map_word", seed_rng.normal(0.0, scale, (hidden_dim, lm_dim)))
        self.map_struct = store.add("prompt.map_struct", seed_rng.normal(0.0, scale, (hidden_dim, lm_dim)))

    def vocab_entities(self, struct_scores: np.ndarray, query: QueryTriplet) -> np.ndarray:
        """Exemplar entity ids for the vocabulary block (top scores, ties by id)."""
        flat = np.asarray(struct_scores, dtype=np.float64).reshape(-1)
        order = np.lexsort((np.arange(flat.shape[0]), -flat))
        return order[: self.exemplars].astype(np.int64)

    def token_stream(
        self,
        backbone: FrozenBackbone,
        cache: TextCache,
        query: QueryTriplet,
        struct_scores: np.ndarray,
    ) -> list[int]:
        tok = backbone.tokenizer
        sp = tok.tokenize(" ")
        nl = tok.tokenize("\n")
        dash = tok.tokenize("-")
        colon = tok.tokenize(":")

        def line(name_ids, desc_ids):
            ids = list(dash) + sp + list(name_ids)
            if desc_ids:
                ids += colon + sp + list(desc_ids)
            return ids + nl

        block: list[int] = []
        for ent in self.vocab_entities(struct_scores, query):
            block += line(cache.entity_name_ids[ent], cache.entity_desc_ids[ent])
        block += line(cache.entity_name_ids[query.head], cache.entity_desc_ids[query.head])
        block += line(cache.relation_name_ids[query.rel], cache.relation_desc_ids[query.rel])
        ids = tok.tokenize(self.prefix_text) + block[: -len(nl)] + tok.tokenize(self.suffix_text)
        return ids

    def build(
        self,
        backbone: FrozenBackbone,
        cache: TextCache,
        query: QueryTriplet,
        struct_scores: np.ndarray,
        w_head: Tensor,
        w_rel: Tensor,
        e_head: Tensor,
        r_query: Tensor,
    ) -> KrlInstruction:
        """Assemble the (m, F) embedding sequence with slots substituted.

        w_head/w_rel are (1, d) pooled word-level vectors; e_head/r_query are
        (1, d) structural vectors. The last two rows of the result are the
        up-projected word-level head and relation.
        """
        tok = backbone.tokenizer
        ids = self.token_stream(backbone, cache, query, struct_scores)
        m = len(ids)
        if m > backbone.config.max_seq_len:
            raise InstructionError(
                f"prompt length {m} exceeds the backbone limit {backbone.config.max_seq_len}"
            )

        slot_ids = {
            tok.token_id(SLOT_WORD_HEAD): "word_head",
            tok.token_id(SLOT_STRUCT_HEAD): "struct_head",
            tok.token_id(SLOT_WORD_REL): "word_rel",
            tok.token_id(SLOT_STRUCT_REL): "struct_rel",
        }
        mapped = {
            "word_head": T.matmul(w_head, self.map_word.tensor),
            "word_rel": T.matmul(w_rel, self.map_word.tensor),
            "struct_head": T.matmul(e_head, self.map_struct.tensor),
            "struct_rel": T.matmul(r_query, self.map_struct.tensor),
        }

        slots: dict[str, list[int]] = {name: [] for name in mapped}
        parts = []
        emb = backbone.embedding.tensor
        seg_start = 0
        id_arr = np.asarray(ids, dtype=np.int64)
        for pos, tid in enumerate(ids):
            name = slot_ids.get(tid)
            if name is None:
                continue
            if pos > seg_start:
                parts.append(T.gather_rows(emb, id_arr[seg_start:pos]))
            parts.append(mapped[name])
            slots[name].append(pos)
            seg_start = pos + 1
        if seg_start < m:
            parts.append(T.gather_rows(emb, id_arr[seg_start:]))

        expected = {"word_head": 2, "struct_head": 1, "word_rel": 2, "struct_rel": 1}
        for name, n in expected.items():
            if len(slots[name]) != n:
                raise InstructionError(
                    f"template must contain {n} occurrence(s) of slot {name}, found {len(slots[name])}"
                )
        if slots["word_head"][-1] != m - 2 or slots["word_rel"][-1] != m - 1:
            raise InstructionError("prompt must end with the word-level head/relation pair")

        return KrlInstruction(token_ids=ids, slots=slots, embeddings=T.concat(parts, axis=0))
