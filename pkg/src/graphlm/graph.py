"""Knowledge-graph loading, validation, inverse augmentation, and the
relation-interaction graph.

File formats (UTF-8, line-oriented, no header):
  * description files: ``id<TAB>name<TAB>description`` (description optional)
  * triplet files: ``head<TAB>relation<TAB>tail`` where each field is either
    a dense integer id or a name declared in the description files
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INVERSE_PREFIX = "inverse of "

# Edge patterns of the relation-interaction graph, in canonical order:
# an edge (a, p, b) says entity-role p.split("2")[0] of relation a coincides
# with entity-role p.split("2")[1] of relation b in some pair of triplets.
PATTERNS = ("h2t", "h2h", "t2h", "t2t")
PATTERN_INDEX = {p: i for i, p in enumerate(PATTERNS)}


class GraphError(Exception):
    """Raised for malformed graph files or contract violations."""


@dataclass(frozen=True)
class EntityRecord:
    id: int
    name: str
    description: str = ""


@dataclass(frozen=True)
class RelationRecord:
    id: int
    name: str
    description: str = ""
    is_inverse: bool = False
    base_id: int = -1


@dataclass(frozen=True)
class QueryTriplet:
    head: int
    rel: int
    answer: int | None = None


@dataclass
class KnowledgeGraph:
    entities: list[EntityRecord]
    relations: list[RelationRecord]
    triplets: np.ndarray  # (T, 3) int64 rows of (head, rel, tail)
    augmented: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_triplets(self) -> int:
        return int(self.triplets.shape[0])

    def outgoing(self, entity: int) -> np.ndarray:
        return self._adjacency()[0].get(entity, _EMPTY_IDX)

    def incoming(self, entity: int) -> np.ndarray:
        return self._adjacency()[1].get(entity, _EMPTY_IDX)

    def _adjacency(self):
        if "adjacency" not in self.meta:
            out: dict[int, list[int]] = {}
            inc: dict[int, list[int]] = {}
            for i, (h, _, t) in enumerate(self.triplets):
                out.setdefault(int(h), []).append(i)
                inc.setdefault(int(t), []).append(i)
            self.meta["adjacency"] = (
                {k: np.asarray(v, dtype=np.int64) for k, v in out.items()},
                {k: np.asarray(v, dtype=np.int64) for k, v in inc.items()},
            )
        return self.meta["adjacency"]

    def validate_query(self, query: QueryTriplet):
        if not (0 <= query.head < self.num_entities):
            raise GraphError(f"query head {query.head} out of range")
        if not (0 <= query.rel < self.num_relations):
            raise GraphError(f"query relation {query.rel} out of range")
        if query.answer is not None and not (0 <= query.answer < self.num_entities):
            raise GraphError(f"query answer {query.answer} out of range")


_EMPTY_IDX = np.zeros(0, dtype=np.int64)


@dataclass
class RelationalGraph:
    """Typed directed graph whose nodes are relations of an augmented KG."""

    node_count: int
    edges: np.ndarray  # (E, 3) int64 rows of (src, pattern, dst)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])


# -- loading -----------------------------------------------------------------


def _read_descriptions(path, kind: str):
    rows = []
    seen_ids = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) == 2:
            parts.append("")
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        try:
            rid = int(parts[0])
        except ValueError as e:
            raise GraphError(f"{path}:{lineno}: non-integer id {parts[0]!r}") from e
        if rid in seen_ids:
            raise GraphError(f"{path}:{lineno}: duplicate {kind} id {rid}")
        if not parts[1]:
            raise GraphError(f"{path}:{lineno}: empty {kind} name")
        seen_ids.add(rid)
        rows.append((rid, parts[1], parts[2]))
    ids = sorted(seen_ids)
    if ids != list(range(len(ids))):
        raise GraphError(f"{path}: {kind} ids must be contiguous from 0")
    rows.sort(key=lambda r: r[0])
    return rows


def _resolve(token: str, by_name: dict[str, int], count: int, path, lineno, kind):
    try:
        idx = int(token)
    except ValueError:
        if token not in by_name:
            raise GraphError(f"{path}:{lineno}: unknown {kind} name {token!r}")
        return by_name[token]
    if not (0 <= idx < count):
        raise GraphError(f"{path}:{lineno}: {kind} id {idx} out of range")
    return idx


def load_graph(triplet_file, entity_desc_file, relation_desc_file) -> KnowledgeGraph:
    """Load and validate a graph; duplicates are dropped and counted.

    The result is not inverse-augmented and the triplet list is canonically
    sorted, so loading is independent of triplet-file row order.
    """
    entities = [EntityRecord(i, n, d) for i, n, d in _read_descriptions(entity_desc_file, "entity")]
    relations = [
        RelationRecord(i, n, d, is_inverse=False, base_id=i)
        for i, n, d in _read_descriptions(relation_desc_file, "relation")
    ]
    ent_by_name = {e.name: e.id for e in entities}
    rel_by_name = {r.name: r.id for r in relations}

    seen = set()
    triplets = []
    duplicates = 0
    for lineno, line in enumerate(Path(triplet_file).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphError(f"{triplet_file}:{lineno}: expected 3 tab-separated fields")
        h = _resolve(parts[0], ent_by_name, len(entities), triplet_file, lineno, "entity")
        r = _resolve(parts[1], rel_by_name, len(relations), triplet_file, lineno, "relation")
        t = _resolve(parts[2], ent_by_name, len(entities), triplet_file, lineno, "entity")
        key = (h, r, t)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        triplets.append(key)
    triplets.sort()
    arr = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        triplets=arr,
        augmented=False,
        meta={"duplicates": duplicates},
    )


def load_queries(path, kg: KnowledgeGraph) -> list[QueryTriplet]:
    """Read evaluation triplets (head, rel, tail) against an existing vocabulary."""
    ent_by_name = {e.name: e.id for e in kg.entities}
    base_rels = [r for r in kg.relations if not r.is_inverse]
    rel_by_name = {r.name: r.id for r in base_rels}
    queries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 3 tab-separated fields")
        h = _resolve(parts[0], ent_by_name, kg.num_entities, path, lineno, "entity")
        r = _resolve(parts[1], rel_by_name, len(base_rels), path, lineno, "relation")
        t = _resolve(parts[2], ent_by_name, kg.num_entities, path, lineno, "entity")
        queries.append(QueryTriplet(head=h, rel=r, answer=t))
    return queries


# -- inverse augmentation ------------------------------------------------------


def augment_inverses(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Double the relation vocabulary and add (t, r+J, h) for every (h, r, t)."""
    if kg.augmented:
        raise GraphError("graph is already inverse-augmented")
    J = kg.num_relations
    relations = list(kg.relations) + [
        RelationRecord(
            id=J + r.id,
            name=INVERSE_PREFIX + r.name,
            description=r.description,
            is_inverse=True,
            base_id=r.id,
        )
        for r in kg.relations
    ]
    fwd = kg.triplets
    inv = np.stack([fwd[:, 2], fwd[:, 1] + J, fwd[:, 0]], axis=1)
    both = np.concatenate([fwd, inv], axis=0)
    order = np.lexsort((both[:, 2], both[:, 1], both[:, 0]))
    return KnowledgeGraph(
        entities=list(kg.entities),
        relations=relations,
        triplets=both[order],
        augmented=True,
        meta={"duplicates": kg.meta.get("duplicates", 0)},
    )


def strip_inverses(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Undo augment_inverses, recovering the original triplet set."""
    if not kg.augmented:
        raise GraphError("graph is not inverse-augmented")
    J = kg.num_relations // 2
    keep = kg.triplets[kg.triplets[:, 1] < J]
    return KnowledgeGraph(
        entities=list(kg.entities),
        relations=[r for r in kg.relations if not r.is_inverse],
        triplets=np.array(keep, copy=True),
        augmented=False,
        meta={"duplicates": kg.meta.get("duplicates", 0)},
    )


def inverse_rel(kg: KnowledgeGraph, rel: int) -> int:
    """Map a relation id to its inverse partner in an augmented graph."""
    if not kg.augmented:
        raise GraphError("graph is not inverse-augmented")
    J = kg.num_relations // 2
    return rel + J if rel < J else rel - J


# -- relation-interaction graph -------------------------------------------------


def build_relational_graph(kg: KnowledgeGraph) -> RelationalGraph:
    """Connect relations that share an entity role across two distinct triplets.

    A pair of distinct triplet occurrences (h1, r1, t1), (h2, r2, t2) witnesses:
      h1 == t2 -> (r1, h2t, r2);  h1 == h2 -> (r1, h2h, r2)
      t1 == h2 -> (r1, t2h, r2);  t1 == t2 -> (r1, t2t, r2)
    Duplicate (src, pattern, dst) witnesses collapse to one edge, and an edge
    (r, p, r) never arises from a single triplet paired with itself.
    """
    if not kg.augmented:
        raise GraphError("relational graph is built over an inverse-augmented graph")
    n = kg.num_relations

    # per-entity counts of relation occurrences in the head / tail role
    head_counts: dict[int, dict[int, int]] = {}
    tail_counts: dict[int, dict[int, int]] = {}
    self_loops: dict[int, dict[int, int]] = {}
    for h, r, t in kg.triplets:
        h, r, t = int(h), int(r), int(t)
        head_counts.setdefault(h, {})
        head_counts[h][r] = head_counts[h].get(r, 0) + 1
        tail_counts.setdefault(t, {})
        tail_counts[t][r] = tail_counts[t].get(r, 0) + 1
        if h == t:
            self_loops.setdefault(h, {})
            self_loops[h][r] = self_loops[h].get(r, 0) + 1

    edges: set[tuple[int, int, int]] = set()
    entities = set(head_counts) | set(tail_counts)
    for e in entities:
        hc = head_counts.get(e, {})
        tc = tail_counts.get(e, {})
        sc = self_loops.get(e, {})
        h_rels = list(hc)
        t_rels = list(tc)
        for r1 in h_rels:  # shared entity is head of r1
            for r2 in h_rels:  # ... and head of r2
                if r1 != r2 or hc[r1] >= 2:
                    edges.add((r1, PATTERN_INDEX["h2h"], r2))
            for r2 in t_rels:  # ... and tail of r2
                pairs = hc[r1] * tc[r2] - (sc.get(r1, 0) if r1 == r2 else 0)
                if r1 != r2 or pairs >= 1:
                    edges.add((r1, PATTERN_INDEX["h2t"], r2))
        for r1 in t_rels:  # shared entity is tail of r1
            for r2 in h_rels:
                pairs = tc[r1] * hc[r2] - (sc.get(r1, 0) if r1 == r2 else 0)
                if r1 != r2 or pairs >= 1:
                    edges.add((r1, PATTERN_INDEX["t2h"], r2))
            for r2 in t_rels:
                if r1 != r2 or tc[r1] >= 2:
                    edges.add((r1, PATTERN_INDEX["t2t"], r2))

    arr = np.asarray(sorted(edges), dtype=np.int64).reshape(-1, 3)
    return RelationalGraph(node_count=n, edges=arr)
