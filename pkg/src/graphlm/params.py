"""Named parameters with a frozen/trainable partition."""

from __future__ import annotations

import hashlib

import numpy as np

from .tensor import Tensor


class Parameter:
    """A named tensor that is either trainable or frozen for its lifetime."""

    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(np.array(value, copy=True), requires_grad=trainable)
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        kind = "trainable" if self.trainable else "frozen"
        return f"Parameter({self.name!r}, shape={self.data.shape}, {kind})"


class ParameterStore:
    """Registry of parameters addressed by hierarchical dotted names."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, value, trainable=trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def frozen(self) -> list[Parameter]:
        return [p for p in self._params.values() if not p.trainable]

    def num_values(self, trainable_only: bool = False) -> int:
        params = self.trainable() if trainable_only else self.parameters()
        return int(sum(p.data.size for p in params))

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None

    def collect_grads(self) -> dict[str, np.ndarray]:
        """Gradients of every trainable parameter reached by the last backward."""
        grads = {}
        for p in self.trainable():
            if p.tensor.grad is not None:
                grads[p.name] = p.tensor.grad
        return grads

    def frozen_checksum(self) -> str:
        """Digest over all frozen parameter payloads, in name order."""
        h = hashlib.sha256()
        for name in sorted(self._params):
            p = self._params[name]
            if not p.trainable:
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data, dtype=np.float64).tobytes())
        return h.hexdigest()

    def trainable_checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._params):
            p = self._params[name]
            if p.trainable:
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data, dtype=np.float64).tobytes())
        return h.hexdigest()

    def cast(self, dtype):
        """Cast every parameter payload (f32 fast mode / f64 default)."""
        for p in self._params.values():
            p.tensor.data = p.tensor.data.astype(dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for name, p in self._params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}"
                )
            p.tensor.data = np.array(arr, dtype=p.data.dtype, copy=True)
