"""Acceptance suite.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them all).
The heavyweight criteria share one desk-scale training run on the bundled
benchmark shapes; tolerances are pinned here and nowhere else.
"""

import json
import time

import numpy as np
import pytest

from graphlm import tensor as T
from graphlm.attention import attention_layer, attention_mix, last_token_closed_form, plain_layer
from graphlm.cli import EXIT_OK, main
from graphlm.datasets import load_split
from graphlm.encoder import Memory
from graphlm.evaluator import easy_hard_report, known_answer_index, rank_queries
from graphlm.gradcheck import (
    check_attention_layer,
    check_encoders,
    check_full_loss,
    tiny_model,
)
from graphlm.graph import QueryTriplet, augment_inverses, build_relational_graph
from graphlm.model import GraphRuntime, Reasoner
from graphlm.tensor import Tensor
from graphlm.trainer import TrainConfig, compute_loss, train

from test_encoder import dense_entity_oracle, dense_relation_oracle
from test_graph import brute_force_relational_edges, make_kg

GRAD_TOL = 1e-4
CLOSED_FORM_TOL = 1e-10
DENSE_ORACLE_TOL = 1e-10
LOSS_ENDPOINT_TOL = 1e-12
RANDOM_MRR_1093 = float(np.sum(1.0 / np.arange(1, 1094)) / 1093)  # ~0.00686
SMOKE_MRR_FLOOR = 10.0 * RANDOM_MRR_1093
SMOKE_STEPS = 500


def _report(num, name, ok, detail=""):
    line = f"ACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'}{(' ' + detail) if detail else ''}"
    print(f"\n{line}", flush=True)
    assert ok, line


@pytest.fixture(scope="session")
def desk_run(fbv1_dataset, tmp_path_factory):
    """Criterion-6 training run, shared by criteria 4, 5, 6, and 7."""
    train_kg, valid_q = load_split(fbv1_dataset, "train")
    cfg = TrainConfig(
        epochs=1,
        steps_per_epoch=SMOKE_STEPS,
        batch_size=4,
        negatives=256,
        kl_weight=0.5,
        memory_k=10,
        gnn_layers=6,
        gnn_dim=64,
        lm_layers=2,
        lm_dim=128,
        seed=0,
        val_interval=100,
        val_sample=30,
    )
    out = tmp_path_factory.mktemp("desk-run")
    t0 = time.time()
    result = train(cfg, train_kg, valid_q, out, dataset_name="fb-v1")
    elapsed = time.time() - t0
    model, _, _ = Reasoner.load(result.best_checkpoint)
    test_kg, test_q = load_split(fbv1_dataset, "test")
    rt = GraphRuntime.prepare(test_kg, model.backbone.tokenizer)
    return {
        "cfg": cfg,
        "result": result,
        "model": model,
        "rt": rt,
        "test_queries": test_q,
        "train_seconds": elapsed,
    }


@pytest.fixture(scope="session")
def desk_eval(desk_run):
    """One scoring pass over all directed test queries, reused across criteria."""
    from graphlm.evaluator import aggregate_results

    t0 = time.time()
    metrics_filtered, results = rank_queries(
        desk_run["model"], desk_run["rt"], desk_run["test_queries"],
        protocol="filtered", collect=True,
    )
    metrics_raw = aggregate_results(results, protocol="raw")
    return {
        "filtered": metrics_filtered,
        "raw": metrics_raw,
        "results": results,
        "seconds": time.time() - t0,
    }


def test_criterion_1_gradient_suite():
    t0 = time.time()
    errs = {
        "encoders": check_encoders(seed=0),
        "attention_k3": check_attention_layer(seed=0, k=3),
        "full_loss": check_full_loss(seed=0),
    }
    elapsed = time.time() - t0
    ok = all(v < GRAD_TOL for v in errs.values()) and elapsed < 120
    _report(1, "gradient suite vs central differences",
            ok, f"max_rel_err={max(errs.values()):.2e} runtime={elapsed:.0f}s")


def test_criterion_2_attention_equivalences():
    t0 = time.time()
    model, _ = tiny_model(seed=0)
    F = model.config.backbone.hidden_dim
    d = model.config.encoder.hidden_dim
    rng = np.random.default_rng(42)

    bit_identical = True
    empty = Memory(np.zeros(0, dtype=np.int64), Tensor(np.zeros((0, d))), np.zeros(0))
    for trial in range(20):
        H = Tensor(rng.standard_normal((int(rng.integers(2, 10)), F)))
        n = int(rng.integers(model.backbone.num_layers))
        krl, _ = attention_layer(H, empty, model.backbone, n, model.mem_weights)
        plain, _ = plain_layer(H, model.backbone, n)
        bit_identical &= np.array_equal(krl.data, plain.data)

    worst = 0.0
    for trial in range(100):
        m = int(rng.integers(2, 12))
        k = int(rng.integers(1, 7))
        H = rng.standard_normal((m, F))
        emb = rng.standard_normal((k, d))
        n = int(rng.integers(model.backbone.num_layers))
        mem = Memory(np.arange(k), Tensor(emb), np.zeros(k))
        out, _ = attention_mix(Tensor(H), mem, model.backbone, n, model.mem_weights)
        ref = last_token_closed_form(
            H, emb, model.backbone, n,
            model.mem_weights[n]["m_q"].data, model.mem_weights[n]["m_v"].data,
        )
        worst = max(worst, float(np.max(np.abs(out.data[-1] - ref))))
    elapsed = time.time() - t0
    ok = bit_identical and worst < CLOSED_FORM_TOL and elapsed < 30
    _report(2, "empty-memory bit identity and closed-form oracle",
            ok, f"max_abs_diff={worst:.2e} runtime={elapsed:.0f}s")


def test_criterion_3_structural_oracles():
    t0 = time.time()
    rng = np.random.default_rng(3)

    rel_ok = True
    for trial in range(50):
        n_e = int(rng.integers(2, 12))
        n_r = int(rng.integers(1, 5))
        n_t = int(rng.integers(1, 101))
        trips = {
            (int(rng.integers(n_e)), int(rng.integers(n_r)), int(rng.integers(n_e)))
            for _ in range(n_t)
        }
        kg = augment_inverses(make_kg(n_e, n_r, trips))
        assert kg.num_triplets <= 200
        rg = build_relational_graph(kg)
        rel_ok &= set(map(tuple, rg.edges.tolist())) == brute_force_relational_edges(kg)

    worst = 0.0
    for seed in range(6):
        model, rt = tiny_model(seed=seed, gnn_layers=3)
        assert rt.kg.num_entities <= 10
        for head, rel in ((0, 1), (2, 4)):
            state = model.encode(rt, QueryTriplet(head=head, rel=rel))
            R = dense_relation_oracle(model, rt, rel)
            E = dense_entity_oracle(model, rt, R, head, R[rel])
            worst = max(worst, float(np.max(np.abs(state.E.data - E))))
            p_head = model.pool_proj.pool(
                model.backbone.projection.tensor, rt.text.entity_word_ids[head]
            )
            from graphlm.predictor import decode_projection

            decoded = decode_projection(model.proj_decoder, rt.tensors, state.R, head, p_head)
            P = dense_entity_oracle(model, rt, R, head, p_head.data.reshape(-1), prefix="proj_gnn")
            worst = max(worst, float(np.max(np.abs(decoded.data - P))))
    elapsed = time.time() - t0
    ok = rel_ok and worst < DENSE_ORACLE_TOL and elapsed < 60
    _report(3, "relational-graph and dense GNN oracles",
            ok, f"gnn_max_abs_diff={worst:.2e} runtime={elapsed:.0f}s")


def test_criterion_4_ranking_metric_oracle(desk_run, desk_eval):
    results = desk_eval["results"]
    rt = desk_run["rt"]
    known = known_answer_index(
        [rt.kg.triplets], list(desk_run["test_queries"]), rt.kg
    )
    ok = len(results) == 2 * 411
    for r in results:
        fused = r.fused
        gt = r.query.answer
        order_raw = sorted(range(len(fused)), key=lambda i: (-fused[i], i))
        ok &= order_raw.index(gt) + 1 == r.rank_raw
        drop = known.get((r.query.head, r.query.rel), set()) - {gt}
        pool = [i for i in range(len(fused)) if i not in drop]
        order_f = sorted(pool, key=lambda i: (-fused[i], i))
        ok &= order_f.index(gt) + 1 == r.rank_filtered
    elapsed = desk_eval["seconds"]
    ok &= elapsed < 300
    _report(4, "ranking equals brute-force re-sort on 411 test triplets x 2 directions",
            ok, f"queries={len(results)} eval_runtime={elapsed:.0f}s")


def test_criterion_5_support_constraint(desk_run, desk_eval):
    entity_set = list(range(desk_run["rt"].kg.num_entities))
    ok = len(entity_set) == 1093
    from graphlm.predictor import rank_entities

    for r in desk_eval["results"]:
        order = rank_entities(r.fused)
        ok &= sorted(order.tolist()) == entity_set
    _report(5, "predictions are exact permutations of the 1093-entity vocabulary", ok)


def test_criterion_6_optimization_smoke(desk_run, desk_eval):
    hist = np.asarray(desk_run["result"].loss_history)
    windows = [float(hist[i * 20 : (i + 1) * 20].mean()) for i in range(5)]
    decreasing = all(windows[i] > windows[i + 1] for i in range(4))
    mrr = desk_eval["filtered"].mrr
    elapsed = desk_run["train_seconds"]
    ok = (
        desk_run["result"].steps >= SMOKE_STEPS
        and decreasing
        and mrr >= SMOKE_MRR_FLOOR
        and elapsed < 3600
    )
    _report(6, "500-step optimization smoke",
            ok,
            f"windows={['%.3f' % w for w in windows]} mrr={mrr:.4f} "
            f"floor={SMOKE_MRR_FLOOR:.4f} train_runtime={elapsed:.0f}s")


def test_criterion_7_easy_hard_directionality(desk_run, desk_eval):
    report = easy_hard_report(desk_eval["results"], protocol="filtered")
    ok = (
        report.easy.count > 0
        and report.hard.count > 0
        and report.easy.mrr > report.hard.mrr
        and report.easy.hit10 > report.hard.hit10
    )
    _report(7, "memory-hit queries beat memory-miss queries",
            ok,
            f"easy(mrr={report.easy.mrr:.3f},hit10={report.easy.hit10:.3f},n={report.easy.count}) "
            f"hard(mrr={report.hard.mrr:.3f},hit10={report.hard.hit10:.3f},n={report.hard.count})")


def test_criterion_8_loss_endpoints():
    rng = np.random.default_rng(8)
    s = Tensor(rng.standard_normal((9, 1)))
    r = Tensor(rng.standard_normal((9, 1)))
    t0, p0 = compute_loss(s, r, 0.0)
    t1, p1 = compute_loss(s, r, 1.0)
    ok = abs(t0.item() - (p0.bce_reader + p0.bce_struct)) < LOSS_ENDPOINT_TOL
    ok &= abs(t1.item() - (p1.kl_struct_to_reader + p1.kl_reader_to_struct)) < LOSS_ENDPOINT_TOL
    _, p_same = compute_loss(s, Tensor(s.data.copy()), 0.5)
    ok &= abs(p_same.kl_struct_to_reader) < LOSS_ENDPOINT_TOL
    ok &= abs(p_same.kl_reader_to_struct) < LOSS_ENDPOINT_TOL
    _report(8, "loss endpoints and zero KL on identical logits", ok)


def test_criterion_9_pipeline_determinism(fbv1_dataset, tmp_path_factory):
    def pipeline(tag):
        out = tmp_path_factory.mktemp(f"det-{tag}")
        args = ["--data", str(fbv1_dataset), "--out", str(out)]
        assert main(["prepare"] + args + ["--vocab-size", "1024"]) == EXIT_OK
        assert main(
            ["train-e2e"] + args + [
                "--epochs", "1", "--steps-per-epoch", "50", "--batch-size", "4",
                "--negatives", "256", "--memory-k", "10", "--seed", "0",
                "--val-interval", "25", "--val-sample", "10", "--dataset-name", "fb-v1",
            ]
        ) == EXIT_OK
        assert main(["evaluate"] + args + ["--dataset-name", "fb-v1"]) == EXIT_OK
        return (out / "metrics.json").read_bytes()

    a = pipeline("a")
    b = pipeline("b")
    ok = a == b
    _report(9, "prepare/train/evaluate twice yields byte-identical metrics", ok,
            f"bytes={len(a)}")
