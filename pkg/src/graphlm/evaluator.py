"""Ranking evaluation, the easy/hard memory diagnostic, and trace export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
import numpy as np

from . import tensor as T
from .graph import GraphError, KnowledgeGraph, QueryTriplet, inverse_rel
from .model import GraphRuntime, Reasoner

PROTOCOLS = ("raw", "filtered")


@dataclass
class RankingMetrics:
    mrr: float = 0.0
    hit10: float = 0.0
    count: int = 0
    per_direction: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mrr": self.mrr, "hit10": self.hit10, "count": self.count}
        if self.per_direction:
            out["per_direction"] = {
                k: {"mrr": v.mrr, "hit10": v.hit10, "count": v.count}
                for k, v in self.per_direction.items()
            }
        return out


def _metrics_from_ranks(ranks: np.ndarray) -> RankingMetrics:
    if ranks.size == 0:
        return RankingMetrics(mrr=0.0, hit10=0.0, count=0)
    return RankingMetrics(
        mrr=float(np.mean(1.0 / ranks)),
        hit10=float(np.mean(ranks <= 10)),
        count=int(ranks.size),
    )


def known_answer_index(triplet_arrays, extra_queries, kg: KnowledgeGraph) -> dict:
    """(head, rel) -> set of known-true tails, over graph facts and eval triplets.

    Graph triplet arrays are expected in augmented form (both directions
    already present); eval queries contribute both their directions.
    """
    known: dict[tuple[int, int], set[int]] = {}

    def put(h, r, t):
        known.setdefault((int(h), int(r)), set()).add(int(t))

    for arr in triplet_arrays:
        for h, r, t in arr:
            put(h, r, t)
    for q in extra_queries or []:
        if q.answer is None:
            continue
        put(q.head, q.rel, q.answer)
        put(q.answer, inverse_rel(kg, q.rel), q.head)
    return known


def rank_of(fused: np.ndarray, answer: int, allowed: np.ndarray | None = None) -> int:
    """1 + strictly-better count + ties with a smaller id, over allowed entities."""
    s_gt = fused[answer]
    if allowed is None:
        greater = np.count_nonzero(fused > s_gt)
        ties_before = np.count_nonzero((fused == s_gt) & (np.arange(fused.size) < answer))
    else:
        sub = fused[allowed]
        ids = np.nonzero(allowed)[0]
        greater = np.count_nonzero(sub > s_gt)
        ties_before = np.count_nonzero((sub == s_gt) & (ids < answer))
    return int(1 + greater + ties_before)


@dataclass
class DirectedResult:
    query: QueryTriplet
    direction: str  # "tail" for (h, r, ?) on a base relation, "head" otherwise
    fused: np.ndarray
    rank_raw: int
    rank_filtered: int
    memory_ids: np.ndarray


def score_directed_query(model: Reasoner, rt: GraphRuntime, query: QueryTriplet, known: dict) -> DirectedResult:
    if query.answer is None:
        raise GraphError("ranking needs the ground-truth answer")
    rt.kg.validate_query(query)
    with T.no_grad():
        fw = model.forward_query(rt, query)
        fused = fw.fused_scores()
    rank_raw = rank_of(fused, query.answer)
    others = known.get((query.head, query.rel), set()) - {query.answer}
    if others:
        allowed = np.ones(fused.size, dtype=bool)
        allowed[list(others)] = False
        rank_filtered = rank_of(fused, query.answer, allowed)
    else:
        rank_filtered = rank_raw
    J = rt.kg.num_relations // 2
    return DirectedResult(
        query=query,
        direction="tail" if query.rel < J else "head",
        fused=fused,
        rank_raw=rank_raw,
        rank_filtered=rank_filtered,
        memory_ids=fw.memory.entity_ids,
    )


def aggregate_results(results: list[DirectedResult], protocol: str = "filtered") -> RankingMetrics:
    """Pooled and per-direction metrics from already-scored queries."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")

    def pick(r):
        return r.rank_filtered if protocol == "filtered" else r.rank_raw

    ranks = np.asarray([pick(r) for r in results], dtype=np.float64)
    metrics = _metrics_from_ranks(ranks)
    for direction in ("tail", "head"):
        sel = np.asarray([pick(r) for r in results if r.direction == direction], dtype=np.float64)
        metrics.per_direction[direction] = _metrics_from_ranks(sel)
    return metrics


def rank_directed_queries(
    model: Reasoner,
    rt: GraphRuntime,
    directed: list[QueryTriplet],
    protocol: str = "filtered",
    known: dict | None = None,
    jobs: int = 1,
    collect: bool = False,
):
    """Metrics over a list of directed queries; optionally keeps per-query results."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    known = known or {}
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(lambda q: score_directed_query(model, rt, q, known), directed))
    else:
        results = [score_directed_query(model, rt, q, known) for q in directed]
    metrics = aggregate_results(results, protocol)
    return metrics, (results if collect else None)


def directed_test_queries(kg: KnowledgeGraph, triplets: list[QueryTriplet]) -> list[QueryTriplet]:
    """Both directions of every test triplet: (h, r, ?) and (t, inv r, ?)."""
    out = []
    for q in triplets:
        out.append(QueryTriplet(q.head, q.rel, q.answer))
        out.append(QueryTriplet(q.answer, inverse_rel(kg, q.rel), q.head))
    return out


def rank_queries(
    model: Reasoner,
    rt: GraphRuntime,
    test_triplets: list[QueryTriplet],
    protocol: str = "filtered",
    extra_known=None,
    jobs: int = 1,
    collect: bool = False,
):
    """Evaluate both directions of each test triplet over the active graph."""
    directed = directed_test_queries(rt.kg, test_triplets)
    known = known_answer_index([rt.kg.triplets], list(test_triplets) + list(extra_known or []), rt.kg)
    return rank_directed_queries(
        model, rt, directed, protocol=protocol, known=known, jobs=jobs, collect=collect
    )


@dataclass
class EasyHardReport:
    easy: RankingMetrics
    hard: RankingMetrics

    def to_dict(self) -> dict:
        return {"easy": self.easy.to_dict(), "hard": self.hard.to_dict()}


def easy_hard_report(results: list[DirectedResult], protocol: str = "filtered") -> EasyHardReport:
    """Split directed queries by whether the answer made it into the memory."""

    def pick(r):
        return r.rank_filtered if protocol == "filtered" else r.rank_raw

    easy = np.asarray(
        [pick(r) for r in results if r.query.answer in set(r.memory_ids.tolist())], dtype=np.float64
    )
    hard = np.asarray(
        [pick(r) for r in results if r.query.answer not in set(r.memory_ids.tolist())], dtype=np.float64
    )
    return EasyHardReport(easy=_metrics_from_ranks(easy), hard=_metrics_from_ranks(hard))


def dump_predictions(model: Reasoner, rt: GraphRuntime, queries: list[QueryTriplet], path) -> int:
    """Top-10 predictions per directed query as JSON lines."""
    n = 0
    with open(path, "w") as f:
        for q in queries:
            with T.no_grad():
                fw = model.forward_query(rt, q)
            struct = fw.struct_scores()
            reader = fw.reader_scores()
            fused = fw.fused_scores()
            from .predictor import rank_entities

            top = rank_entities(fused)[:10]
            f.write(
                json.dumps(
                    {
                        "query": {"head": q.head, "rel": q.rel, "answer": q.answer},
                        "top10": [
                            {
                                "entity": int(e),
                                "fused": float(fused[e]),
                                "struct": float(struct[e]),
                                "krlm": float(reader[e]),
                            }
                            for e in top
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            n += 1
    return n


def export_attention(model: Reasoner, rt: GraphRuntime, query: QueryTriplet, path) -> list[dict]:
    """Write the per-layer last-token attention trace as JSON lines."""
    with T.no_grad():
        fw = model.forward_query(rt, query)
    records = fw.trace.to_records()
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def evaluate_dataset(
    model: Reasoner,
    rt: GraphRuntime,
    test_triplets: list[QueryTriplet],
    dataset_name: str,
    protocol: str = "filtered",
    jobs: int = 1,
) -> dict:
    """Full metric JSON: pooled/per-direction ranking plus the easy/hard split."""
    metrics, results = rank_queries(
        model, rt, test_triplets, protocol=protocol, jobs=jobs, collect=True
    )
    report = easy_hard_report(results, protocol=protocol)
    return {
        "dataset": dataset_name,
        "protocol": protocol,
        "mrr": metrics.mrr,
        "hit10": metrics.hit10,
        "query_count": metrics.count,
        "per_direction": {
            k: {"mrr": v.mrr, "hit10": v.hit10, "count": v.count}
            for k, v in metrics.per_direction.items()
        },
        "easy_hard": report.to_dict(),
    }
