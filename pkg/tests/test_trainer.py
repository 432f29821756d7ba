"""Negative sampling, the distillation loss, and short training runs."""

import json

import numpy as np
import pytest

from graphlm import tensor as T
from graphlm.datasets import TOY, generate_dataset, load_split
from graphlm.gradcheck import tiny_graph, tiny_model
from graphlm.graph import GraphError, QueryTriplet, augment_inverses
from graphlm.tensor import Tensor
from graphlm.trainer import (
    LossBreakdown,
    TrainConfig,
    TrainingDiverged,
    compute_loss,
    query_loss,
    sample_negatives,
    train,
)


class TestSampleNegatives:
    def test_forced_choice(self):
        kg = augment_inverses(tiny_graph(n_entities=2, n_relations=1, n_triplets=1, seed=0))
        q = QueryTriplet(head=0, rel=0, answer=1)
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(sample_negatives(q, kg, 1, rng), [0])

    def test_answer_never_sampled(self):
        kg = augment_inverses(tiny_graph(n_entities=8, n_relations=2, n_triplets=5, seed=0))
        q = QueryTriplet(head=0, rel=0, answer=3)
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert 3 not in sample_negatives(q, kg, 5, rng)

    def test_deterministic_under_seed(self):
        kg = augment_inverses(tiny_graph(n_entities=30, n_relations=2, n_triplets=10, seed=0))
        q = QueryTriplet(head=0, rel=0, answer=3)
        a = sample_negatives(q, kg, 10, np.random.default_rng(42))
        b = sample_negatives(q, kg, 10, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_single_entity_graph_rejected(self):
        kg = augment_inverses(tiny_graph(n_entities=1, n_relations=1, n_triplets=1, seed=0))
        with pytest.raises(GraphError):
            sample_negatives(QueryTriplet(0, 0, 0), kg, 1, np.random.default_rng(0))

    def test_small_pool_samples_with_replacement(self, caplog):
        kg = augment_inverses(tiny_graph(n_entities=4, n_relations=1, n_triplets=3, seed=0))
        q = QueryTriplet(head=0, rel=0, answer=1)
        out = sample_negatives(q, kg, 10, np.random.default_rng(0))
        assert len(out) == 10 and 1 not in out

    def test_inclusion_frequency_matches_uniform_expectation(self, fbv1_train):
        kg, _ = fbv1_train
        aug = augment_inverses(kg)
        q = QueryTriplet(head=0, rel=0, answer=0)
        rng = np.random.default_rng(7)
        draws = 10000
        n = 256
        counts = np.zeros(aug.num_entities)
        for _ in range(draws):
            counts[sample_negatives(q, aug, n, rng)] += 1
        counts = counts[1:]  # the excluded answer stays at zero
        p = n / (aug.num_entities - 1)
        mu = draws * p
        sigma = np.sqrt(draws * p * (1 - p))
        z = np.abs(counts - mu) / sigma
        # all well-behaved, allowing the expected handful of 3-sigma outliers
        assert np.mean(z <= 3.0) > 0.99
        assert z.max() < 5.0


def rand_logits(rng, c):
    return Tensor(rng.standard_normal((c, 1)), requires_grad=True)


class TestComputeLoss:
    def test_identical_logits_zero_kl(self, rng):
        x = rand_logits(rng, 9)
        y = Tensor(x.data.copy())
        _, parts = compute_loss(x, y, 0.5)
        assert parts.kl_struct_to_reader == pytest.approx(0.0, abs=1e-14)
        assert parts.kl_reader_to_struct == pytest.approx(0.0, abs=1e-14)

    def test_lambda_endpoints(self, rng):
        s = rand_logits(rng, 7)
        r = rand_logits(rng, 7)
        t0, p0 = compute_loss(s, r, 0.0)
        assert t0.item() == pytest.approx(p0.bce_reader + p0.bce_struct, abs=1e-12)
        t1, p1 = compute_loss(s, r, 1.0)
        assert t1.item() == pytest.approx(p1.kl_struct_to_reader + p1.kl_reader_to_struct, abs=1e-12)

    def test_replay_oracle(self, rng):
        s = rand_logits(rng, 6)
        r = rand_logits(rng, 6)
        total, parts = compute_loss(s, r, 0.5)

        def sig(x):
            return 1 / (1 + np.exp(-x))

        def bce(logits):
            sc = sig(logits.reshape(-1))
            return -np.log(sc[0]) - np.mean(np.log(1 - sc[1:]))

        def softmax(x):
            e = np.exp(x - x.max())
            return e / e.sum()

        ps, pr = softmax(s.data.reshape(-1)), softmax(r.data.reshape(-1))
        kl_sr = float(np.sum(ps * (np.log(ps) - np.log(pr))))
        kl_rs = float(np.sum(pr * (np.log(pr) - np.log(ps))))
        expected = 0.5 * (bce(r.data) + bce(s.data)) + 0.5 * (kl_sr + kl_rs)
        assert total.item() == pytest.approx(expected, abs=1e-12)
        assert parts.total == pytest.approx(expected, abs=1e-12)

    def test_swap_symmetry_at_half(self, rng):
        s = rand_logits(rng, 6)
        r = rand_logits(rng, 6)
        t1, p1 = compute_loss(s, r, 0.5)
        t2, p2 = compute_loss(r, s, 0.5)
        assert t1.item() == pytest.approx(t2.item(), abs=1e-12)
        assert p1.bce_struct == pytest.approx(p2.bce_reader, abs=1e-12)
        assert p1.kl_struct_to_reader == pytest.approx(p2.kl_reader_to_struct, abs=1e-12)

    def test_flipped_sign_variant_adds_negative_term(self, rng):
        s = rand_logits(rng, 5)
        r = rand_logits(rng, 5)
        _, fixed = compute_loss(s, r, 0.0)
        _, printed = compute_loss(s, r, 0.0, flip_neg_sign=True)
        sc = 1 / (1 + np.exp(-s.data.reshape(-1)))
        neg_term = float(np.mean(np.log(1 - sc[1:])))
        assert printed.bce_struct - fixed.bce_struct == pytest.approx(2 * neg_term, abs=1e-12)

    def test_mismatched_candidates_rejected(self, rng):
        s = rand_logits(rng, 5)
        r = rand_logits(rng, 5)
        with pytest.raises(ValueError, match="differ"):
            compute_loss(s, r, 0.5, struct_ids=[0, 1, 2, 3, 4], reader_ids=[0, 1, 2, 3, 5])
        with pytest.raises(ValueError):
            compute_loss(s, rand_logits(rng, 4), 0.5)

    def test_invalid_lambda_rejected(self, rng):
        with pytest.raises(ValueError):
            compute_loss(rand_logits(rng, 3), rand_logits(rng, 3), 1.5)

    def test_kl_of_identical_distributions_has_zero_gradient(self, rng):
        # both KL directions between a distribution and itself: value 0, grad 0
        x = rand_logits(rng, 8)
        total, _ = compute_loss(x, x, 1.0)
        total.backward()
        assert total.item() == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_gradients_reach_both_scorers(self):
        model, rt = tiny_model(seed=0)
        q = QueryTriplet(head=0, rel=1, answer=2)
        total, _, _ = query_loss(model, rt, q, np.array([1, 3]), lam=0.5)
        model.store.zero_grad()
        total.backward()
        grads = model.store.collect_grads()
        struct_norm = np.linalg.norm(grads["struct_score.w1"])
        reader_norm = np.linalg.norm(grads["reader_score.w1"])
        assert struct_norm > 0 and reader_norm > 0


class TestLossBreakdown:
    def test_total_identity(self):
        parts = LossBreakdown(1.0, 2.0, 0.25, 0.75, lam=0.3)
        assert parts.total == pytest.approx(0.7 * 3.0 + 0.3 * 1.0, abs=1e-15)
        d = parts.as_log_dict()
        assert set(d) == {"total", "bce_struct", "bce_krlm", "kl_s2k", "kl_k2s"}


@pytest.fixture(scope="module")
def toy_training(tmp_path_factory):
    root = generate_dataset(tmp_path_factory.mktemp("toy-train"), TOY, seed=11)
    train_kg, valid_q = load_split(root, "train")
    cfg = TrainConfig(
        epochs=1, steps_per_epoch=120, batch_size=2, negatives=16, memory_k=4,
        gnn_layers=2, gnn_dim=8, lm_layers=1, lm_dim=16, vocab_size=400,
        seed=3, val_interval=60, val_sample=8, accumulation=2,
    )
    out = tmp_path_factory.mktemp("toy-run")
    result = train(cfg, train_kg, valid_q, out, dataset_name="toy")
    return cfg, result, out


class TestTrainingLoop:
    def test_windowed_loss_decreases(self, toy_training):
        _, result, _ = toy_training
        hist = np.asarray(result.loss_history)
        windows = [hist[i * 20 : (i + 1) * 20].mean() for i in range(5)]
        assert all(windows[i] > windows[i + 1] for i in range(4)), windows

    def test_metrics_log_schema(self, toy_training):
        _, result, out = toy_training
        lines = [json.loads(l) for l in result.metrics_path.read_text().splitlines()]
        steps = [l for l in lines if "loss" in l]
        assert len(steps) == 120
        assert set(steps[0]["loss"]) == {"total", "bce_struct", "bce_krlm", "kl_s2k", "kl_k2s"}
        assert "lr" in steps[0]
        assert any("val_mrr" in l for l in lines)

    def test_manifest_written(self, toy_training):
        _, _, out = toy_training
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["dataset"] == "toy"
        assert manifest["validation_metric"] == "fused_mrr_filtered"
        assert "model_config" in manifest and "vocabulary" in manifest

    def test_checkpoints_exist_and_load(self, toy_training):
        from graphlm.model import Reasoner

        _, result, _ = toy_training
        model, manifest, opt_state = Reasoner.load(result.best_checkpoint)
        assert opt_state is not None
        assert model.config.encoder.layers == 2

    def test_zero_steps_checkpoint_equals_initialization(self, tmp_path, toy_dataset):
        train_kg, valid_q = load_split(toy_dataset, "train")
        cfg = TrainConfig(
            epochs=1, steps_per_epoch=0, batch_size=2, negatives=8, memory_k=2,
            gnn_layers=1, gnn_dim=8, lm_layers=1, lm_dim=16, vocab_size=400,
            seed=5, val_interval=0,
        )
        result = train(cfg, train_kg, valid_q, tmp_path, dataset_name="toy")
        from graphlm.model import Reasoner, build_tokenizer
        from graphlm.graph import augment_inverses as aug_fn

        loaded, _, _ = Reasoner.load(result.last_checkpoint)
        fresh = Reasoner(cfg.model_config(), build_tokenizer(aug_fn(train_kg), cfg.vocab_size))
        assert loaded.store.frozen_checksum() == fresh.store.frozen_checksum()
        assert loaded.store.trainable_checksum() == fresh.store.trainable_checksum()

    def test_frozen_backbone_untouched_by_training(self, toy_training):
        from graphlm.model import Reasoner

        cfg, result, _ = toy_training
        model, _, _ = Reasoner.load(result.best_checkpoint)
        from graphlm.datasets import load_split as ls

        fresh = Reasoner(cfg.model_config(), model.backbone.tokenizer)
        assert model.store.frozen_checksum() == fresh.store.frozen_checksum()
        assert model.store.trainable_checksum() != fresh.store.trainable_checksum()

    def test_seed_reproducibility(self, tmp_path, toy_dataset):
        train_kg, valid_q = load_split(toy_dataset, "train")
        cfg = TrainConfig(
            epochs=1, steps_per_epoch=10, batch_size=2, negatives=8, memory_k=2,
            gnn_layers=1, gnn_dim=8, lm_layers=1, lm_dim=16, vocab_size=400,
            seed=9, val_interval=0,
        )
        r1 = train(cfg, train_kg, valid_q, tmp_path / "a", dataset_name="toy")
        r2 = train(cfg, train_kg, valid_q, tmp_path / "b", dataset_name="toy")
        np.testing.assert_array_equal(r1.loss_history, r2.loss_history)

    def test_finetune_records_source_checkpoint(self, toy_training, tmp_path, toy_dataset):
        _, result, _ = toy_training
        train_kg, valid_q = load_split(toy_dataset, "train")
        cfg = TrainConfig(
            epochs=1, steps_per_epoch=3, batch_size=2, negatives=8, memory_k=4,
            gnn_layers=2, gnn_dim=8, lm_layers=1, lm_dim=16, vocab_size=400,
            seed=4, val_interval=0, mode="finetune",
        )
        res = train(
            cfg, train_kg, valid_q, tmp_path, dataset_name="toy",
            source_checkpoint=result.best_checkpoint,
        )
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["source_checkpoint"] == str(result.best_checkpoint)

    def test_nan_abort_snapshot(self, tmp_path, toy_dataset):
        train_kg, valid_q = load_split(toy_dataset, "train")
        cfg = TrainConfig(
            epochs=1, steps_per_epoch=5, batch_size=1, negatives=4, memory_k=2,
            gnn_layers=1, gnn_dim=8, lm_layers=1, lm_dim=16, vocab_size=400,
            seed=0, val_interval=0, lr=1e9,  # force divergence
        )
        with pytest.raises(TrainingDiverged):
            train(cfg, train_kg, valid_q, tmp_path, dataset_name="toy")
        assert (tmp_path / "divergence.json").exists()

    def test_finetune_requires_checkpoint(self, tmp_path, toy_dataset):
        train_kg, valid_q = load_split(toy_dataset, "train")
        cfg = TrainConfig(mode="finetune", steps_per_epoch=1)
        with pytest.raises(ValueError, match="checkpoint"):
            train(cfg, train_kg, valid_q, tmp_path, dataset_name="toy")
