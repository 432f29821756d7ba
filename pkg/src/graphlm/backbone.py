"""A miniature frozen decoder-style language backbone.

The tokenizer does greedy longest-match segmentation over a corpus-built
vocabulary, pre-split on whitespace, with single-byte fallback so any string
round-trips exactly. Backbone weights are deterministic scaled-Gaussian draws
from a seed; everything here is frozen after construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import ParameterStore

# Placeholder tokens for the four query slots of an assembled prompt.
SLOT_WORD_HEAD = "[W_EH]"
SLOT_STRUCT_HEAD = "[K_EH]"
SLOT_WORD_REL = "[W_RQ]"
SLOT_STRUCT_REL = "[K_RQ]"
SPECIAL_TOKENS = (SLOT_WORD_HEAD, SLOT_STRUCT_HEAD, SLOT_WORD_REL, SLOT_STRUCT_REL)

_RUN_RE = re.compile(r"\S+|\s+")


class ConfigError(Exception):
    """Invalid backbone configuration."""


@dataclass
class BackboneConfig:
    layers: int = 2
    hidden_dim: int = 128
    vocab_size: int = 1024
    ffn_dim: int = 0  # 0 means 4 * hidden_dim
    seed: int = 0
    max_seq_len: int = 512

    def __post_init__(self):
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.hidden_dim
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_dim < 8 or self.hidden_dim % 2 != 0:
            raise ConfigError(f"hidden_dim must be even and >= 8, got {self.hidden_dim}")
        if self.vocab_size < 64:
            raise ConfigError(f"vocab_size must be >= 64, got {self.vocab_size}")


class Tokenizer:
    """Deterministic subword tokenizer with byte fallback.

    Entries are byte strings: 256 single-byte tokens, the slot placeholders,
    then the most frequent whitespace-delimited words of the corpus.
    """

    def __init__(self, entries: list[bytes]):
        self.entries = list(entries)
        self._ids = {e: i for i, e in enumerate(self.entries)}
        if len(self._ids) != len(self.entries):
            raise ValueError("duplicate tokenizer entries")
        self._max_len = max(len(e) for e in self.entries)

    def __len__(self):
        return len(self.entries)

    @classmethod
    def build(cls, corpus: list[str], size: int = 1024) -> "Tokenizer":
        counts: dict[str, int] = {}
        for text in corpus:
            for run in _RUN_RE.findall(text):
                if run.isspace() or any(s in run for s in SPECIAL_TOKENS):
                    continue
                counts[run] = counts.get(run, 0) + 1
        entries = [bytes([i]) for i in range(256)]
        entries += [s.encode("utf-8") for s in SPECIAL_TOKENS]
        taken = set(entries)
        budget = size - len(entries)
        for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            if budget <= 0:
                break
            b = word.encode("utf-8")
            if b in taken:
                continue
            entries.append(b)
            taken.add(b)
            budget -= 1
        return cls(entries)

    def token_id(self, token: str) -> int:
        return self._ids[token.encode("utf-8")]

    def tokenize(self, text: str) -> list[int]:
        ids: list[int] = []
        for run in _RUN_RE.findall(text):
            b = run.encode("utf-8")
            whole = self._ids.get(b)
            if whole is not None:
                ids.append(whole)
                continue
            i = 0
            n = len(b)
            while i < n:
                for L in range(min(self._max_len, n - i), 0, -1):
                    tid = self._ids.get(b[i : i + L])
                    if tid is not None:
                        ids.append(tid)
                        i += L
                        break
        return ids

    def detokenize(self, ids) -> str:
        return b"".join(self.entries[i] for i in ids).decode("utf-8")

    # vocabulary file: one "token<TAB>id" per line; byte tokens as "b:<hex>",
    # string tokens as "s:<escaped>"
    def save(self, path):
        lines = []
        for i, e in enumerate(self.entries):
            if len(e) == 1:
                enc = "b:" + e.hex()
            else:
                s = e.decode("utf-8")
                enc = "s:" + s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")
            lines.append(f"{enc}\t{i}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        entries: list[bytes] = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            enc, idx = line.rsplit("\t", 1)
            if enc.startswith("b:"):
                e = bytes.fromhex(enc[2:])
            elif enc.startswith("s:"):
                e = _unescape(enc[2:]).encode("utf-8")
            else:
                raise ValueError(f"bad vocabulary entry {line!r}")
            if int(idx) != len(entries):
                raise ValueError("vocabulary ids must be dense and in order")
            entries.append(e)
        return cls(entries)


def _unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            out.append({"n": "\n", "t": "\t", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((max_len, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


@dataclass
class FrozenBackbone:
    """Frozen embedding table, attention/FFN weights, and projection head."""

    config: BackboneConfig
    tokenizer: Tokenizer
    embedding: object = None  # Parameter (V, F)
    projection: object = None  # Parameter (V, F), initialized tied to embedding
    layers: list = field(default_factory=list)
    positions: np.ndarray = None

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    @property
    def num_layers(self) -> int:
        return self.config.layers


def init_backbone(
    cfg: BackboneConfig, tokenizer: Tokenizer, store: ParameterStore, prefix="backbone"
) -> FrozenBackbone:
    """Deterministically draw frozen weights and register them in the store."""
    V = len(tokenizer)
    F = cfg.hidden_dim
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xB0CE])))
    scale = 1.0 / np.sqrt(F)

    emb = store.add(f"{prefix}.embedding", rng.normal(0.0, scale, (V, F)), trainable=False)
    proj = store.add(f"{prefix}.projection", np.array(emb.data, copy=True), trainable=False)

    layers = []
    for n in range(cfg.layers):
        layer = {
            "w_q": store.add(f"{prefix}.layer{n}.w_q", rng.normal(0.0, scale, (F, F)), trainable=False),
            "w_k": store.add(f"{prefix}.layer{n}.w_k", rng.normal(0.0, scale, (F, F)), trainable=False),
            "w_v": store.add(f"{prefix}.layer{n}.w_v", rng.normal(0.0, scale, (F, F)), trainable=False),
            "ffn_w1": store.add(
                f"{prefix}.layer{n}.ffn_w1", rng.normal(0.0, scale, (F, cfg.ffn_dim)), trainable=False
            ),
            "ffn_b1": store.add(f"{prefix}.layer{n}.ffn_b1", np.zeros(cfg.ffn_dim), trainable=False),
            "ffn_w2": store.add(
                f"{prefix}.layer{n}.ffn_w2",
                rng.normal(0.0, 1.0 / np.sqrt(cfg.ffn_dim), (cfg.ffn_dim, F)),
                trainable=False,
            ),
            "ffn_b2": store.add(f"{prefix}.layer{n}.ffn_b2", np.zeros(F), trainable=False),
            "ffn_norm": store.add(f"{prefix}.layer{n}.ffn_norm", np.ones(F), trainable=False),
        }
        layers.append(layer)

    return FrozenBackbone(
        config=cfg,
        tokenizer=tokenizer,
        embedding=emb,
        projection=proj,
        layers=layers,
        positions=sinusoidal_positions(cfg.max_seq_len, F),
    )
