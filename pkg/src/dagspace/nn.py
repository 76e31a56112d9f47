"""Neural-network primitives over the autodiff tape.

Holds the operation-embedding table, affine/MLP/GRU/gated-sum forward
functions, parameter initialization, the finite-difference gradient checker,
the Adam optimizer, and checkpoint serialization. Everything is float64 and
CPU-only by design.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"DSPCKPT1"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    """Operands do not have compatible shapes."""


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Linear:
    w: Tensor
    b: Tensor | None = None

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]


def linear_params(rng: np.random.Generator, in_dim: int, out_dim: int, bias: bool = True) -> Linear:
    w = Tensor(uniform_init(rng, (in_dim, out_dim), in_dim))
    b = Tensor(np.zeros(out_dim)) if bias else None
    return Linear(w, b)


def affine(layer: Linear, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_dim:
        raise ShapeMismatch(f"input width {x.shape[-1]} != layer width {layer.in_dim}")
    out = ad.matmul(x, layer.w)
    if layer.b is not None:
        out = ad.add(out, layer.b)
    return out


@dataclass
class MlpParams:
    layers: tuple[Linear, ...]
    activation: str = "relu"


def mlp_params(
    rng: np.random.Generator, sizes: Sequence[int], activation: str = "relu"
) -> MlpParams:
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least an input and an output width")
    layers = tuple(linear_params(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1))
    return MlpParams(layers, activation)


_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}


def mlp_forward(params: MlpParams, x) -> Tensor:
    """Affine stack with the configured activation between layers, linear output."""
    x = ad.as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, x.shape[0]))
    act = _ACTIVATIONS[params.activation]
    out = x
    for i, layer in enumerate(params.layers):
        out = affine(layer, out)
        if i < len(params.layers) - 1:
            out = act(out)
    if squeeze:
        out = ad.reshape(out, (out.shape[1],))
    return out


@dataclass
class GruParams:
    """Gate-ordered (reset, update, candidate) thirds along the 3H axis."""

    w_ih: Tensor
    w_hh: Tensor
    b_ih: Tensor
    b_hh: Tensor

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]


def gru_params(rng: np.random.Generator, input_dim: int, hidden: int) -> GruParams:
    return GruParams(
        w_ih=Tensor(uniform_init(rng, (input_dim, 3 * hidden), input_dim)),
        w_hh=Tensor(uniform_init(rng, (hidden, 3 * hidden), hidden)),
        b_ih=Tensor(np.zeros(3 * hidden)),
        b_hh=Tensor(np.zeros(3 * hidden)),
    )


def gru_input_projection(params: GruParams, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.shape[-1] != params.w_ih.shape[0]:
        raise ShapeMismatch(
            f"input width {x.shape[-1]} != cell input width {params.w_ih.shape[0]}"
        )
    return ad.add(ad.matmul(x, params.w_ih), params.b_ih)


def gru_cell(params: GruParams, x, h) -> Tensor:
    """One recurrent update; x is the cell input, h the previous state."""
    x = ad.as_tensor(x)
    h = ad.as_tensor(h)
    squeeze = x.ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, x.shape[0]))
    if h.ndim == 1:
        h = ad.reshape(h, (1, h.shape[0]))
    if h.shape[-1] != params.hidden:
        raise ShapeMismatch(f"state width {h.shape[-1]} != hidden width {params.hidden}")
    if x.shape[0] != h.shape[0]:
        raise ShapeMismatch(f"batch sizes differ: {x.shape[0]} vs {h.shape[0]}")
    out = ad.gru_gates(gru_input_projection(params, x), h, params.w_hh, params.b_hh)
    if squeeze:
        out = ad.reshape(out, (out.shape[1],))
    return out


def gated_sum(
    gate_params: Linear,
    map_params: Linear,
    messages,
    sources: Sequence[int] | None = None,
) -> Tensor:
    """Sum of sigmoid-gated mapped messages; the empty set gives zeros.

    Accumulation runs in a canonical order (ascending source index when
    sources are given, lexicographic message content otherwise) so the result
    is bitwise invariant to the order messages arrive in.
    """
    if isinstance(messages, Tensor) or isinstance(messages, np.ndarray):
        stacked = ad.as_tensor(messages)
        if stacked.ndim != 2:
            raise ShapeMismatch("a message matrix must be 2-D")
    else:
        messages = list(messages)
        if not messages:
            return ad.zeros(map_params.out_dim)
        rows = []
        for m in messages:
            m = ad.as_tensor(m)
            if m.ndim != 1:
                raise ShapeMismatch("each message must be a 1-D vector")
            rows.append(ad.reshape(m, (1, m.shape[0])))
        stacked = ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]
    if stacked.shape[0] == 0:
        return ad.zeros(map_params.out_dim)
    if stacked.shape[1] != gate_params.in_dim or stacked.shape[1] != map_params.in_dim:
        raise ShapeMismatch(
            f"message width {stacked.shape[1]} != network width "
            f"{gate_params.in_dim}/{map_params.in_dim}"
        )
    if sources is not None:
        if len(sources) != stacked.shape[0]:
            raise ShapeMismatch("sources must pair one index with each message")
        order = np.argsort(np.asarray(sources, dtype=np.intp), kind="stable")
    else:
        order = np.lexsort(stacked.data.T[::-1])
    if not np.array_equal(order, np.arange(stacked.shape[0])):
        stacked = ad.gather_rows(stacked, order)
    gates = ad.sigmoid(affine(gate_params, stacked))
    mapped = affine(map_params, stacked)
    return ad.tsum(ad.mul(gates, mapped), axis=0)


class OperationEmbeddingTable:
    """One row per node type: the operations first, then input and output."""

    def __init__(self, weights: np.ndarray, trainable: bool):
        self.weights = Tensor(weights)
        self.trainable = trainable

    @property
    def num_types(self) -> int:
        return self.weights.shape[0]

    @property
    def d_op(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def learnable(
        cls, num_types: int, d_op: int, rng: np.random.Generator
    ) -> "OperationEmbeddingTable":
        return cls(rng.standard_normal((num_types, d_op)), trainable=True)

    @classmethod
    def one_hot(cls, num_types: int) -> "OperationEmbeddingTable":
        return cls(np.eye(num_types), trainable=False)


def embed(table: OperationEmbeddingTable, type_index) -> Tensor:
    """Row lookup, differentiable into the table; accepts an int or an array."""
    idx = np.asarray(type_index, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.num_types):
        raise IndexError(
            f"type index out of range [0, {table.num_types}): {type_index!r}"
        )
    scalar = idx.ndim == 0
    rows = ad.gather_rows(table.weights, idx.reshape(-1))
    if scalar:
        rows = ad.reshape(rows, (table.d_op,))
    return rows


def grad_check(
    op_under_test: Callable,
    params,
    inputs,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    params is a mapping or sequence of Tensors, passed through unchanged to
    op_under_test(params, inputs), which must be deterministic; non-scalar
    outputs are implicitly summed on both sides of the comparison.
    """
    if isinstance(params, Mapping):
        tensors = list(params.values())
    else:
        params = list(params)
        tensors = params
    for p in tensors:
        p.grad = None
    out = op_under_test(params, inputs)
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in tensors]

    def value() -> float:
        with ad.no_grad():
            return float(op_under_test(params, inputs).data.sum())

    worst = 0.0
    for p, a in zip(tensors, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            f_plus = value()
            flat[i] = saved - epsilon
            f_minus = value()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a_i = a.reshape(-1)[i]
            err = abs(a_i - numeric) / max(1e-8, abs(a_i) + abs(numeric))
            worst = max(worst, err)
    return worst


class Adam:
    """Standard Adam with bias correction; deterministic given update order."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class ParameterBlock:
    """Named parameter tensors with an insertion order and a frozen subset."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, data: np.ndarray, frozen: bool = False) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64))
        self._params[name] = t
        if frozen:
            self._frozen.add(name)
        return t

    def register(self, name: str, tensor: Tensor, frozen: bool = False) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        if frozen:
            self._frozen.add(name)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def tensors(self, trainable_only: bool = False) -> list[Tensor]:
        if trainable_only:
            return [t for n, t in self._params.items() if n not in self._frozen]
        return list(self._params.values())

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for n, t in self._params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {n!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._params.values())


def save_checkpoint(path: str, arrays: Mapping[str, np.ndarray], meta: Mapping) -> None:
    """Self-describing binary container: versioned JSON header, then raw
    float64 little-endian tensor data in header order. Byte-deterministic."""
    names = list(arrays)
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta),
        "tensors": [{"name": n, "shape": list(np.asarray(arrays[n]).shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            arr = np.ascontiguousarray(np.asarray(arrays[n], dtype=np.float64))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated tensor data for {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays
