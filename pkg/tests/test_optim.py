"""Optimizer behavior: warmup schedule, accumulation, decay, moments."""

import numpy as np
import pytest

from graphlm.optim import AdamW, OptimizerConfig
from graphlm.params import ParameterStore


def make_store(rng, trainable=True):
    store = ParameterStore()
    store.add("w", rng.standard_normal((3, 2)), trainable=trainable)
    store.add("b", rng.standard_normal(2), trainable=trainable)
    return store


def grads_like(store, value=0.0):
    return {p.name: np.full_like(p.data, value) for p in store.trainable()}


class TestAdamW:
    def test_zero_gradients_leave_only_decay(self, rng):
        store = make_store(rng)
        before = {p.name: p.data.copy() for p in store.parameters()}
        cfg = OptimizerConfig(lr=1e-2, weight_decay=0.1, accumulation=1, total_steps=100, warmup_fraction=0.0)
        opt = AdamW(store, cfg)
        opt.step(grads_like(store, 0.0))
        for p in store.parameters():
            np.testing.assert_allclose(p.data, before[p.name] * (1 - 1e-2 * 0.1), atol=1e-12)

    def test_warmup_is_linear(self, rng):
        store = make_store(rng)
        cfg = OptimizerConfig(lr=1.0, total_steps=10000, warmup_fraction=0.01, accumulation=1, weight_decay=0.0)
        opt = AdamW(store, cfg)
        # 10000 updates, 1% warmup -> 100 warmup updates
        assert opt.current_lr() == pytest.approx(1.0 / 100)
        lrs = []
        for _ in range(100):
            lrs.append(opt.current_lr())
            opt.step(grads_like(store, 1e-3))
        np.testing.assert_allclose(lrs, np.arange(1, 101) / 100.0, atol=1e-12)
        assert opt.current_lr() == 1.0

    def test_update_applied_every_accumulation_micro_steps(self, rng):
        store = make_store(rng)
        cfg = OptimizerConfig(lr=1e-3, accumulation=4, total_steps=100, warmup_fraction=0.0, weight_decay=0.0)
        opt = AdamW(store, cfg)
        w0 = store["w"].data.copy()
        for micro in range(3):
            applied = opt.step(grads_like(store, 1.0))
            assert not applied
            np.testing.assert_array_equal(store["w"].data, w0)
        assert opt.step(grads_like(store, 1.0))
        assert not np.array_equal(store["w"].data, w0)

    def test_accumulation_averages_micro_gradients(self, rng):
        # four micro-steps of g match one update with mean(g)
        values = [1.0, 2.0, 3.0, 6.0]
        results = []
        for mode in ("micro", "mean"):
            store = ParameterStore()
            store.add("w", np.ones((2, 2)))
            acc = 4 if mode == "micro" else 1
            opt = AdamW(store, OptimizerConfig(lr=1e-2, accumulation=acc, total_steps=400, warmup_fraction=0.0, weight_decay=0.0))
            if mode == "micro":
                for v in values:
                    opt.step(grads_like(store, v))
            else:
                opt.step(grads_like(store, float(np.mean(values))))
            results.append(store["w"].data.copy())
        np.testing.assert_allclose(results[0], results[1], atol=1e-14)

    def test_constant_gradient_step_magnitude_approaches_lr(self, rng):
        # with a constant gradient the adaptive step converges to size lr
        store = ParameterStore()
        store.add("w", np.zeros((1, 1)))
        lr = 1e-3
        opt = AdamW(store, OptimizerConfig(lr=lr, accumulation=1, total_steps=100000, warmup_fraction=0.0, weight_decay=0.0))
        prev = store["w"].data.copy()
        sizes = []
        for _ in range(300):
            opt.step({"w": np.full((1, 1), 0.37)})
            sizes.append(abs(float(store["w"].data[0, 0] - prev[0, 0])))
            prev = store["w"].data.copy()
        assert sizes[-1] == pytest.approx(lr, rel=1e-2)

    def test_missing_gradient_is_named(self, rng):
        store = make_store(rng)
        opt = AdamW(store, OptimizerConfig())
        with pytest.raises(ValueError, match="b"):
            opt.step({"w": np.zeros((3, 2))})

    def test_state_roundtrip(self, rng):
        store = make_store(rng)
        opt = AdamW(store, OptimizerConfig(accumulation=2))
        opt.step(grads_like(store, 0.5))
        state = opt.state()
        opt2 = AdamW(store, OptimizerConfig(accumulation=2))
        opt2.load_state(state)
        assert opt2.micro_step == 1 and opt2.update_step == 0
        np.testing.assert_array_equal(opt2._pending["w"], opt._pending["w"])


class TestFrozenPartition:
    def test_frozen_checksum_survives_updates(self, rng):
        store = ParameterStore()
        store.add("frozen", rng.standard_normal((4, 4)), trainable=False)
        store.add("live", rng.standard_normal((4, 4)), trainable=True)
        checksum = store.frozen_checksum()
        opt = AdamW(store, OptimizerConfig(accumulation=1))
        for _ in range(25):
            opt.step({"live": rng.standard_normal((4, 4))})
        assert store.frozen_checksum() == checksum
        assert store.trainable_checksum() != checksum
