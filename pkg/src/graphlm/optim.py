"""AdamW with linear warmup and micro-step gradient accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


@dataclass
class OptimizerConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.01
    total_steps: int = 10000
    accumulation: int = 4


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over the trainable slice of a store.

    ``step`` is called once per micro-step with that micro-step's gradients.
    Gradients are averaged across ``accumulation`` micro-steps and the
    parameter update is applied on every ``accumulation``-th call. The
    learning rate warms up linearly over the first ``warmup_fraction`` of
    the update schedule.
    """

    store: ParameterStore
    config: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        self.micro_step = 0
        self.update_step = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._pending: dict[str, np.ndarray] = {}
        for p in self.store.trainable():
            self._m[p.name] = np.zeros_like(p.data)
            self._v[p.name] = np.zeros_like(p.data)
            self._pending[p.name] = np.zeros_like(p.data)

    def current_lr(self) -> float:
        """Learning rate that the next applied update will use."""
        cfg = self.config
        updates_total = max(1, cfg.total_steps // max(1, cfg.accumulation))
        warmup = max(1, int(round(cfg.warmup_fraction * updates_total)))
        t = self.update_step + 1
        return cfg.lr * min(1.0, t / warmup)

    def step(self, grads: dict[str, np.ndarray]) -> bool:
        """Accumulate one micro-step; returns True when an update was applied."""
        for p in self.store.trainable():
            if p.name not in grads:
                raise ValueError(f"missing gradient for trainable parameter {p.name}")
            self._pending[p.name] += grads[p.name]
        self.micro_step += 1
        if self.micro_step % self.config.accumulation != 0:
            return False
        self._apply_update()
        return True

    def _apply_update(self):
        cfg = self.config
        lr = self.current_lr()
        self.update_step += 1
        t = self.update_step
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for p in self.store.trainable():
            g = self._pending[p.name] / cfg.accumulation
            m = self._m[p.name]
            v = self._v[p.name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.tensor.data -= lr * (
                m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.tensor.data
            )
            self._pending[p.name][...] = 0.0

    def state(self) -> dict:
        return {
            "micro_step": self.micro_step,
            "update_step": self.update_step,
            "m": dict(self._m),
            "v": dict(self._v),
            "pending": dict(self._pending),
        }

    def load_state(self, state: dict):
        self.micro_step = int(state["micro_step"])
        self.update_step = int(state["update_step"])
        for name in self._m:
            self._m[name][...] = state["m"][name]
            self._v[name][...] = state["v"][name]
            self._pending[name][...] = state["pending"][name]
