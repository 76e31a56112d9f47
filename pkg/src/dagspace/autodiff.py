"""Reverse-mode differentiation over a fixed set of array operations.

A Tensor wraps a float64 ndarray together with a gradient buffer and a
backward closure. Operations build a tape; Tensor.backward walks it once in
reverse topological order. Only the primitives this library needs exist here,
each with a hand-written vector-Jacobian product. The recurrent cell and the
row-gather used for embedding lookups are fused into single tape nodes so a
training step stays a short tape of large matrix products.
"""

from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np
from scipy.special import expit as _sigmoid

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block; forwards still run."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_prev")

    def __init__(self, data, prev: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._prev = prev

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad over the whole tape.

        Seeds with ones, so calling on a non-scalar sums over all entries.
        """
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        seed = np.ones_like(self.data)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _acc(t: Tensor, g) -> None:
    """Add a contribution to t.grad, allocating lazily on first touch.

    The first write copies: g is often a view into a downstream buffer, and
    a second contribution arriving later must not mutate that buffer.
    """
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _acc_owned(t: Tensor, g: np.ndarray) -> None:
    """Like _acc for a freshly allocated g, adopted without copying."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _out(data: np.ndarray, prev: tuple, backward) -> Tensor:
    if not _GRAD_ENABLED:
        return Tensor(data)
    t = Tensor(data, prev)
    t._backward = backward(t)
    return t


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(out):
        def run():
            _acc(a, _unbroadcast(out.grad, a.shape))
            _acc(b, _unbroadcast(out.grad, b.shape))

        return run

    return _out(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bw(out):
        def run():
            _acc(a, _unbroadcast(out.grad, a.shape))
            gb = _unbroadcast(out.grad, b.shape)
            if b.grad is None:
                b.grad = -gb
            else:
                b.grad -= gb

        return run

    return _out(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(out):
        def run():
            _acc_owned(a, _unbroadcast(out.grad * b.data, a.shape))
            _acc_owned(b, _unbroadcast(out.grad * a.data, b.shape))

        return run

    return _out(data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def run():
            _acc_owned(a, out.grad @ b.data.T)
            _acc_owned(b, a.data.T @ out.grad)

        return run

    return _out(data, (a, b), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = _sigmoid(a.data)

    def bw(out):
        def run():
            _acc_owned(a, out.grad * data * (1.0 - data))

        return run

    return _out(data, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def bw(out):
        def run():
            _acc_owned(a, out.grad * (1.0 - data * data))

        return run

    return _out(data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bw(out):
        def run():
            _acc_owned(a, out.grad * (a.data > 0.0))

        return run

    return _out(data, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def bw(out):
        def run():
            _acc_owned(a, out.grad * data)

        return run

    return _out(data, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def bw(out):
        def run():
            _acc_owned(a, out.grad / a.data)

        return run

    return _out(data, (a,), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where no clamping happened."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(out):
        def run():
            _acc_owned(a, out.grad * mask)

        return run

    return _out(data, (a,), bw)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def run():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(g, a.shape))

        return run

    return _out(data, (a,), bw)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bw(out):
        def run():
            _acc(a, out.grad.reshape(a.shape))

        return run

    return _out(data, (a,), bw)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw(out):
        def run():
            for p, g in zip(parts, np.split(out.grad, offsets, axis=axis)):
                _acc(p, g)

        return run

    return _out(data, tuple(parts), bw)


def gather_rows(table, idx: np.ndarray) -> Tensor:
    """Row lookup out[i] = table[idx[i]]; backward scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.intp)
    data = table.data[idx]

    def bw(out):
        def run():
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, out.grad)

        return run

    return _out(data, (table,), bw)


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Per-row cross-entropy of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    softmax = ez / sez
    rows = np.arange(x.shape[0])
    losses = np.log(sez[:, 0]) - z[rows, labels]

    def bw(out):
        def run():
            g = softmax.copy()
            g[rows, labels] -= 1.0
            g *= out.grad[:, None]
            _acc_owned(logits, g)

        return run

    return _out(losses, (logits,), bw)


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy between sigmoid(logits) and targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    x = logits.data
    losses = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def bw(out):
        def run():
            _acc_owned(logits, (_sigmoid(x) - t) * out.grad)

        return run

    return _out(losses, (logits,), bw)


def gru_gates(gi, h, w_hh, b_hh) -> Tensor:
    """Recurrent cell update given the precomputed input projection gi.

    gi is x @ w_ih + b_ih laid out as the (reset, update, candidate) thirds of
    a (B, 3H) matrix; the same layout applies to w_hh/b_hh. Computing gi once
    and reusing it across calls keeps the per-call cost to one matrix product.
    """
    gi, h, w_hh, b_hh = as_tensor(gi), as_tensor(h), as_tensor(w_hh), as_tensor(b_hh)
    hd = h.data
    hid = hd.shape[1]
    gh = hd @ w_hh.data + b_hh.data
    gd = gi.data
    gh_n = gh[:, 2 * hid :]
    r = _sigmoid(gd[:, :hid] + gh[:, :hid])
    z = _sigmoid(gd[:, hid : 2 * hid] + gh[:, hid : 2 * hid])
    n = np.tanh(gd[:, 2 * hid :] + r * gh_n)
    data = (1.0 - z) * n + z * hd

    def bw(out):
        def run():
            g = out.grad
            dz = g * (hd - n)
            dn = g * (1.0 - z)
            dan = dn * (1.0 - n * n)
            dr = dan * gh_n
            dar = dr * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dgi = np.concatenate([dar, daz, dan], axis=1)
            dgh = np.concatenate([dar, daz, dan * r], axis=1)
            _acc_owned(gi, dgi)
            _acc_owned(w_hh, hd.T @ dgh)
            _acc_owned(b_hh, dgh.sum(axis=0))
            _acc_owned(h, g * z + dgh @ w_hh.data.T)

        return run

    return _out(data, (gi, h, w_hh, b_hh), bw)


def batch_propagate(a_hat: np.ndarray, t) -> Tensor:
    """Per-graph neighborhood averaging: rows of t grouped graph-major.

    a_hat is a constant (B, n, n) stack of normalized adjacency matrices and
    t a (B*n, d) matrix of node states; returns a_hat @ t graph by graph.
    """
    t = as_tensor(t)
    b, n, _ = a_hat.shape
    d = t.shape[1]
    x = t.data.reshape(b, n, d)
    data = np.matmul(a_hat, x).reshape(b * n, d)
    a_t = a_hat.transpose(0, 2, 1)

    def bw(out):
        def run():
            g = out.grad.reshape(b, n, d)
            _acc_owned(t, np.matmul(a_t, g).reshape(b * n, d))

        return run

    return _out(data, (t,), bw)


def zeros(shape: tuple[int, ...] | int) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))
