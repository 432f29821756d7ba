"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray and, when it participates in a differentiable
computation, records a backward closure on a tape. Calling ``backward`` on a
scalar result walks the tape in reverse topological order and accumulates
gradients into every reachable Tensor with ``requires_grad`` set.

Conventions:
  * float64 throughout unless a Tensor is explicitly created in float32.
  * max/min route gradients to the first occurrence on ties.
  * column-wise std uses population normalization; a single row (or a
    constant column) gets a zero gradient.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "powc",
    "softmax",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "reduce_min",
    "std_cols",
    "gather_rows",
    "repeat_rows",
    "reshape",
    "transpose",
    "spmm",
    "ConstMatrix",
]

DEFAULT_DTYPE = np.float64


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _lift(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- backward pass -----------------------------------------------------

    def backward(self):
        """Run reverse-mode accumulation from this scalar node."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # free intermediates; leaves have no _backward


def tensor(data, requires_grad=False, dtype=None):
    arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _topo_order(root):
    """Iterative post-order DFS (forward chains can be deep)."""
    order = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in visited and parent.requires_grad:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _accum(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, copy=True)
    else:
        node.grad += g


def _unbroadcast(g, shape):
    """Sum a gradient back down to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _node(data, parents, backward):
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


# -- elementwise and linear algebra ----------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _node(out_data, (a, b), backward)


def concat(parts, axis=0) -> Tensor:
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if not p.requires_grad:
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _node(out_data, parts, backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _node(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _node(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), backward)


def powc(a: Tensor, p: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    out_data = a.data**p

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _node(out_data, (a,), backward)


def softmax(a: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax; -inf logits are legal and get weight 0."""
    x = a.data
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        _accum(a, (g - dot) * out_data)

    return _node(out_data, (a,), backward)


# -- reductions -------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _node(out_data, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / count, a.data.shape).copy())

    return _node(out_data, (a,), backward)


def _arg_extreme_backward(a, axis, idx, g, keepdims):
    mask = np.zeros_like(a.data)
    gg = g if keepdims else np.expand_dims(g, axis)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
    _accum(a, mask * np.broadcast_to(gg, a.data.shape))


def reduce_max(a: Tensor, axis=0, keepdims=False) -> Tensor:
    out_data = np.max(a.data, axis=axis, keepdims=keepdims)
    idx = np.argmax(a.data, axis=axis)  # first occurrence on ties

    def backward(g):
        _arg_extreme_backward(a, axis, idx, g, keepdims)

    return _node(out_data, (a,), backward)


def reduce_min(a: Tensor, axis=0, keepdims=False) -> Tensor:
    out_data = np.min(a.data, axis=axis, keepdims=keepdims)
    idx = np.argmin(a.data, axis=axis)

    def backward(g):
        _arg_extreme_backward(a, axis, idx, g, keepdims)

    return _node(out_data, (a,), backward)


def std_cols(a: Tensor) -> Tensor:
    """Population standard deviation of each column of an (L, d) matrix.

    L == 1 yields zeros, with the gradient defined as zero there (same for
    any constant column).
    """
    x = a.data
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"std_cols expects a non-empty 2-D input, got {x.shape}")
    L = x.shape[0]
    mu = np.mean(x, axis=0)
    centered = x - mu
    out_data = np.sqrt(np.mean(centered * centered, axis=0))

    def backward(g):
        denom = L * out_data
        safe = np.where(denom == 0.0, 1.0, denom)
        scale = np.where(out_data == 0.0, 0.0, g / safe)
        _accum(a, centered * scale)

    return _node(out_data, (a,), backward)


# -- indexing and structure --------------------------------------------------


def gather_rows(a: Tensor, idx, scatter=None) -> Tensor:
    """Select rows of a 2-D tensor.

    ``scatter`` may be a precomputed ConstMatrix of shape (rows(a), len(idx))
    mapping gathered rows back to their sources; without it the backward pass
    falls back to np.add.at (fine for small index sets).
    """
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx]

    def backward(g):
        if not a.requires_grad:
            return
        if scatter is not None:
            _accum(a, scatter.mat @ g)
        else:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            _accum(a, acc)

    return _node(out_data, (a,), backward)


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a (1, d) row into an (n, d) matrix."""
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ValueError(f"repeat_rows expects shape (1, d), got {a.data.shape}")
    out_data = np.repeat(a.data, n, axis=0)

    def backward(g):
        _accum(a, g.sum(axis=0, keepdims=True))

    return _node(out_data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(out_data, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    out_data = a.data.T

    def backward(g):
        _accum(a, g.T)

    return _node(out_data, (a,), backward)


class ConstMatrix:
    """A constant (sparse or dense) matrix with its cached transpose."""

    __slots__ = ("mat", "mat_t")

    def __init__(self, mat):
        self.mat = mat
        self.mat_t = mat.T
        if hasattr(self.mat_t, "tocsr"):
            self.mat_t = self.mat_t.tocsr()

    @property
    def shape(self):
        return self.mat.shape


def spmm(m: ConstMatrix, x: Tensor) -> Tensor:
    """Multiply a constant matrix (typically sparse CSR) by a dense tensor."""
    out_data = m.mat @ x.data
    if not isinstance(out_data, np.ndarray):
        out_data = np.asarray(out_data)

    def backward(g):
        back = m.mat_t @ g
        if not isinstance(back, np.ndarray):
            back = np.asarray(back)
        _accum(x, back)

    return _node(out_data, (x,), backward)
