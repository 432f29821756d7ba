"""Inductive knowledge-graph link prediction with a frozen decoder LM,
structural graph encoders, and an entity-memory attention layer."""

__version__ = "0.1.0"


def _tune_allocator():
    # The tape allocates fresh multi-MB arrays every op; glibc mmap/munmaps
    # blocks above 128KB, paying page-fault cost on every allocation. Keep
    # large blocks on the heap instead (Linux/glibc only; best effort).
    import ctypes
    import sys

    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass


_tune_allocator()

from .graph import (
    KnowledgeGraph,
    QueryTriplet,
    RelationalGraph,
    augment_inverses,
    build_relational_graph,
    load_graph,
    strip_inverses,
)
from .model import GraphRuntime, ModelConfig, Reasoner, build_tokenizer
from .trainer import TrainConfig, train

__all__ = [
    "KnowledgeGraph",
    "QueryTriplet",
    "RelationalGraph",
    "augment_inverses",
    "build_relational_graph",
    "load_graph",
    "strip_inverses",
    "GraphRuntime",
    "ModelConfig",
    "Reasoner",
    "build_tokenizer",
    "TrainConfig",
    "train",
]
