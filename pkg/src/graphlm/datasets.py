"""Synthetic benchmark graphs and split-directory loaders.

The generator produces an inductive link-prediction benchmark in the layout::

    <root>/relations.tsv            id<TAB>name<TAB>description
    <root>/<split>/entities.tsv     id<TAB>name<TAB>description
    <root>/<split>/graph.tsv        fact triplets of that split's graph
    <root>/<split>/queries.tsv      held-out evaluation triplets

Train and test graphs share the relation vocabulary but have disjoint entity
sets drawn from the same latent schema (typed entities; relations with typed
signatures; "mirror" relations that copy a base relation and "composed"
relations that follow two-hop base paths), so structure learned on the train
graph transfers to the test graph. Split sizes default to the published
FB-V1 statistics so evaluation shapes match the literature exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import KnowledgeGraph, QueryTriplet, load_graph, load_queries

TYPE_WORDS = [
    "harbor", "meadow", "quarry", "atelier", "granary", "foundry",
    "orchard", "archive", "bazaar", "citadel", "lagoon", "workshop",
]
GUILD_WORDS = [
    "amber", "basalt", "cedar", "damson", "ember", "fennel", "garnet",
    "heather", "indigo", "juniper", "kelp", "laurel", "mallow", "nettle",
]
NOUN_WORDS = [
    "kestrel", "otter", "bramble", "cobble", "drift", "esker", "fjord",
    "gorse", "heron", "inlet", "jetty", "knoll", "larch", "marsh",
    "nock", "osprey", "pike", "quill", "reed", "sedge", "tarn",
    "umber", "vole", "wren", "yarrow", "zephyr", "alder", "brook",
    "crag", "dale", "elm", "fern", "glen", "holt", "iris", "jay",
]
VERB_WORDS = [
    "supplies", "borders", "escorts", "charters", "trades", "patrols",
    "harvests", "ferries", "guards", "stocks", "repairs", "surveys",
    "brews", "carves", "weaves", "smelts", "herds", "plants",
]


@dataclass(frozen=True)
class SplitShape:
    """Target statistics for one generated benchmark."""

    name: str
    relations: int
    train_entities: int
    train_triplets: int
    valid_queries: int
    test_entities: int
    test_triplets: int
    test_queries: int


# shapes of the inductive-entity benchmark family this generator mirrors
FB_V1 = SplitShape("fb-v1", 180, 1594, 4245, 489, 1093, 1993, 411)
TOY = SplitShape("toy", 12, 60, 180, 24, 40, 90, 18)
SHAPES = {s.name: s for s in (FB_V1, TOY)}


def _zipf_weights(n: int, a: float = 0.8) -> np.ndarray:
    w = 1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), a)
    return w / w.sum()


@dataclass
class _Schema:
    n_types: int
    rel_kind: list  # per relation: ("base", None) | ("mirror", base_id) | ("composed", (a, b))
    rel_sig: list  # per relation: (src_type, dst_type)
    rel_names: list
    rel_descs: list


def _make_schema(rng, n_relations: int, n_types: int) -> _Schema:
    n_base = max(1, n_relations // 3)
    n_mirror = max(0, (n_relations - n_base) // 2)
    n_composed = n_relations - n_base - n_mirror

    rel_kind, rel_sig = [], []
    for _ in range(n_base):
        rel_kind.append(("base", None))
        rel_sig.append((int(rng.integers(n_types)), int(rng.integers(n_types))))
    for i in range(n_mirror):
        b = i % n_base
        rel_kind.append(("mirror", b))
        rel_sig.append(rel_sig[b])
    for i in range(n_composed):
        a = int(rng.integers(n_base))
        # pick b whose source type matches a's destination type when possible
        candidates = [j for j in range(n_base) if rel_sig[j][0] == rel_sig[a][1]]
        b = candidates[int(rng.integers(len(candidates)))] if candidates else int(rng.integers(n_base))
        rel_kind.append(("composed", (a, b)))
        rel_sig.append((rel_sig[a][0], rel_sig[b][1]))

    names, descs = [], []
    for rid, (kind, _) in enumerate(rel_kind):
        verb = VERB_WORDS[rid % len(VERB_WORDS)]
        names.append(f"{verb}_{rid:03d}")
        src, dst = rel_sig[rid]
        descs.append(
            f"{kind} tie that {verb} a {TYPE_WORDS[src]} party with a {TYPE_WORDS[dst]} party"
        )
    return _Schema(n_types, rel_kind, rel_sig, names, descs)


def _make_entities(rng, n: int, n_types: int, tag: str):
    types = rng.integers(0, n_types, size=n)
    names, descs = [], []
    for i in range(n):
        noun = NOUN_WORDS[int(rng.integers(len(NOUN_WORDS)))]
        guild = GUILD_WORDS[int(types[i]) % len(GUILD_WORDS)]
        names.append(f"{noun}-{tag}{i:04d}")
        descs.append(f"a {TYPE_WORDS[int(types[i])]} member of the {guild} guild")
    return types, names, descs


def _generate_graph(rng, schema: _Schema, types: np.ndarray, n_facts: int, n_eval: int):
    """Facts plus held-out inferable evaluation triplets, with exact counts."""
    by_type = [np.nonzero(types == t)[0] for t in range(schema.n_types)]
    for t, pool in enumerate(by_type):
        if pool.size == 0:
            by_type[t] = np.arange(types.size)  # degenerate tiny graphs
    type_w = [_zipf_weights(p.size) for p in by_type]

    base_ids = [i for i, (k, _) in enumerate(schema.rel_kind) if k == "base"]
    mirror_ids = [i for i, (k, _) in enumerate(schema.rel_kind) if k == "mirror"]
    composed_ids = [i for i, (k, _) in enumerate(schema.rel_kind) if k == "composed"]
    base_w = _zipf_weights(len(base_ids), a=0.5)

    facts: set[tuple[int, int, int]] = set()
    base_facts: list[tuple[int, int, int]] = []
    base_pairs_by_rel: dict[int, list[tuple[int, int]]] = {}
    out_by_rel_head: dict[tuple[int, int], list[int]] = {}

    def add_fact(h, r, t):
        key = (int(h), int(r), int(t))
        if key in facts:
            return False
        facts.add(key)
        if schema.rel_kind[r][0] == "base":
            base_facts.append(key)
            base_pairs_by_rel.setdefault(r, []).append((key[0], key[2]))
            out_by_rel_head.setdefault((r, h), []).append(t)
        return True

    def sample_base_fact():
        r = base_ids[int(rng.choice(len(base_ids), p=base_w))]
        src, dst = schema.rel_sig[r]
        h = int(rng.choice(by_type[src], p=type_w[src]))
        t = int(rng.choice(by_type[dst], p=type_w[dst]))
        return h, r, t

    n_base_target = int(n_facts * 0.55)
    guard = 0
    while len(facts) < n_base_target and guard < 100 * n_facts:
        add_fact(*sample_base_fact())
        guard += 1

    n_mirror_target = int(n_facts * 0.80)
    guard = 0
    while len(facts) < n_mirror_target and guard < 100 * n_facts and base_facts and mirror_ids:
        h, b, t = base_facts[int(rng.integers(len(base_facts)))]
        options = [m for m in mirror_ids if schema.rel_kind[m][1] == base_ids.index(b)]
        if options:
            add_fact(h, options[int(rng.integers(len(options)))], t)
        guard += 1

    guard = 0
    while len(facts) < n_facts and guard < 200 * n_facts:
        if composed_ids and rng.random() < 0.7 and base_facts:
            c = composed_ids[int(rng.integers(len(composed_ids)))]
            a, b = schema.rel_kind[c][1]
            x_opts = base_pairs_by_rel.get(base_ids[a])
            if x_opts:
                x, y = x_opts[int(rng.integers(len(x_opts)))]
                zs = out_by_rel_head.get((base_ids[b], y))
                if zs:
                    add_fact(x, c, zs[int(rng.integers(len(zs)))])
        else:
            add_fact(*sample_base_fact())
        guard += 1
    while len(facts) < n_facts:  # last-resort fill, still deduplicated
        add_fact(*sample_base_fact())

    # held-out queries: mirror/composed triplets whose evidence is in the graph
    eval_set: set[tuple[int, int, int]] = set()
    guard = 0
    while len(eval_set) < n_eval and guard < 400 * max(1, n_eval):
        guard += 1
        if base_facts and mirror_ids and rng.random() < 0.5:
            h, b, t = base_facts[int(rng.integers(len(base_facts)))]
            options = [m for m in mirror_ids if schema.rel_kind[m][1] == base_ids.index(b)]
            if not options:
                continue
            key = (h, options[int(rng.integers(len(options)))], t)
        elif composed_ids and base_facts:
            c = composed_ids[int(rng.integers(len(composed_ids)))]
            a, b = schema.rel_kind[c][1]
            x_opts = base_pairs_by_rel.get(base_ids[a])
            if not x_opts:
                continue
            x, y = x_opts[int(rng.integers(len(x_opts)))]
            zs = out_by_rel_head.get((base_ids[b], y))
            if not zs:
                continue
            key = (x, c, zs[int(rng.integers(len(zs)))])
        else:
            continue
        if key not in facts and key not in eval_set:
            eval_set.add(key)
    while len(eval_set) < n_eval:  # pad with unseen base-style triplets
        h, r, t = sample_base_fact()
        if (h, r, t) not in facts:
            eval_set.add((h, r, t))

    return sorted(facts), sorted(eval_set)


def generate_dataset(root, shape: SplitShape = FB_V1, seed: int = 7) -> Path:
    """Write a synthetic benchmark with exactly the shape's statistics."""
    root = Path(root)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xDA7A])))
    n_types = min(len(TYPE_WORDS), max(2, shape.relations // 15))
    schema = _make_schema(rng, shape.relations, n_types)

    root.mkdir(parents=True, exist_ok=True)
    rel_lines = [
        f"{i}\t{schema.rel_names[i]}\t{schema.rel_descs[i]}" for i in range(shape.relations)
    ]
    (root / "relations.tsv").write_text("\n".join(rel_lines) + "\n", encoding="utf-8")

    for split, tag, n_ent, n_facts, n_eval in (
        ("train", "tr", shape.train_entities, shape.train_triplets, shape.valid_queries),
        ("test", "te", shape.test_entities, shape.test_triplets, shape.test_queries),
    ):
        types, names, descs = _make_entities(rng, n_ent, n_types, tag)
        facts, evals = _generate_graph(rng, schema, types, n_facts, n_eval)
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        ent_lines = [f"{i}\t{names[i]}\t{descs[i]}" for i in range(n_ent)]
        (d / "entities.tsv").write_text("\n".join(ent_lines) + "\n", encoding="utf-8")
        (d / "graph.tsv").write_text(
            "\n".join(f"{h}\t{r}\t{t}" for h, r, t in facts) + "\n", encoding="utf-8"
        )
        (d / "queries.tsv").write_text(
            "\n".join(f"{h}\t{r}\t{t}" for h, r, t in evals) + "\n", encoding="utf-8"
        )
    return root


def load_split(root, split: str) -> tuple[KnowledgeGraph, list[QueryTriplet]]:
    """Load one split directory: (raw graph, held-out evaluation triplets)."""
    root = Path(root)
    kg = load_graph(
        root / split / "graph.tsv",
        root / split / "entities.tsv",
        root / "relations.tsv",
    )
    queries = load_queries(root / split / "queries.tsv", kg)
    return kg, queries


def dataset_files(root) -> list[Path]:
    root = Path(root)
    files = [root / "relations.tsv"]
    for split in ("train", "test"):
        for name in ("entities.tsv", "graph.tsv", "queries.tsv"):
            files.append(root / split / name)
    return [f for f in files if f.exists()]
