"""Variational auto-encoder over architecture DAGs.

Two encoder backbones map a DAG to a diagonal-Gaussian posterior: sequential
message passing along the node order (one GRU update per node, predecessors
aggregated by a gated sum) and simultaneous graph convolutions. A shared
autoregressive decoder generates nodes one at a time and proposes incoming
edges for each new node, scanning earlier nodes from nearest to farthest.

Training-time code paths run batched over DAGs with identical node counts;
per-graph adjacency enters only as 0/1 masks, so one batched pass equals the
per-graph recursion exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _sigmoid
from .nn import (
    Linear,
    MlpParams,
    OperationEmbeddingTable,
    ParameterBlock,
    affine,
    gru_params,
    linear_params,
    load_checkpoint,
    mlp_forward,
    mlp_params,
    save_checkpoint,
)
from .space import ArchitectureDag, SearchSpace, complete_loose_ends, validate


class InvalidDag(ValueError):
    """The DAG fails the connectivity invariants required here."""


@dataclass
class LatentPoint:
    """A point in latent space: posterior moments plus an optional sample.

    When z is present it was produced as mu + exp(0.5 * log_var) * eps with
    the recorded eps.
    """

    mu: np.ndarray
    log_var: np.ndarray
    z: np.ndarray | None = None
    eps: np.ndarray | None = None


class VaeModel:
    """Holds the embedding table and all encoder/decoder parameters."""

    def __init__(
        self,
        space: SearchSpace,
        hidden: int = 128,
        latent: int = 56,
        d_op: int = 3,
        embedding_kind: str = "learnable",
        encoder_kind: str = "async",
        gcn_rounds: int = 3,
        score_input_edges: bool = True,
        rng: np.random.Generator | None = None,
    ):
        if embedding_kind not in ("learnable", "onehot"):
            raise ValueError(f"unknown embedding kind {embedding_kind!r}")
        if encoder_kind not in ("async", "gcn"):
            raise ValueError(f"unknown encoder kind {encoder_kind!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.space = space
        self.hidden = hidden
        self.latent = latent
        self.d_op = d_op
        self.embedding_kind = embedding_kind
        self.encoder_kind = encoder_kind
        self.gcn_rounds = gcn_rounds
        self.score_input_edges = score_input_edges
        if embedding_kind == "learnable":
            self.table = OperationEmbeddingTable.learnable(space.num_types, d_op, rng)
        else:
            self.table = OperationEmbeddingTable.one_hot(space.num_types)
        self._init_params(rng)

    @property
    def d_embed(self) -> int:
        return self.table.d_op

    def _init_params(self, rng: np.random.Generator) -> None:
        """Draw all non-embedding parameters fresh; the table is kept as is."""
        h, l, d_e = self.hidden, self.latent, self.d_embed
        msg_w = h + d_e
        if self.encoder_kind == "async":
            self.enc_gru = gru_params(rng, d_e, h)
            self.enc_gate = linear_params(rng, msg_w, h)
            self.enc_map = linear_params(rng, msg_w, h, bias=False)
        else:
            widths = [d_e] + [h] * self.gcn_rounds
            self.gcn_layers = tuple(
                linear_params(rng, widths[i], widths[i + 1], bias=False)
                for i in range(self.gcn_rounds)
            )
        self.head_mu = linear_params(rng, h, l)
        self.head_var = linear_params(rng, h, l)
        self.dec_init = linear_params(rng, l, h)
        self.dec_gru = gru_params(rng, d_e, h)
        self.dec_gate = linear_params(rng, msg_w, h)
        self.dec_map = linear_params(rng, msg_w, h, bias=False)
        self.type_mlp = mlp_params(rng, [h, 2 * h, self.space.num_types])
        self.edge_mlp = mlp_params(rng, [2 * h, 4 * h, 1])
        self._rebuild_block()

    def _rebuild_block(self) -> None:
        block = ParameterBlock()
        block.register("emb.weights", self.table.weights, frozen=not self.table.trainable)
        if self.encoder_kind == "async":
            _register_gru(block, "enc.gru", self.enc_gru)
            _register_linear(block, "enc.gate", self.enc_gate)
            _register_linear(block, "enc.map", self.enc_map)
        else:
            for i, layer in enumerate(self.gcn_layers):
                _register_linear(block, f"enc.gcn{i}", layer)
        _register_linear(block, "enc.head_mu", self.head_mu)
        _register_linear(block, "enc.head_var", self.head_var)
        _register_linear(block, "dec.init", self.dec_init)
        _register_gru(block, "dec.gru", self.dec_gru)
        _register_linear(block, "dec.gate", self.dec_gate)
        _register_linear(block, "dec.map", self.dec_map)
        _register_mlp(block, "dec.type", self.type_mlp)
        _register_mlp(block, "dec.edge", self.edge_mlp)
        self.params = block

    def reinit_non_embedding(self, rng: np.random.Generator) -> None:
        self._init_params(rng)

    def trainable_tensors(self) -> list[Tensor]:
        return self.params.tensors(trainable_only=True)

    def config_dict(self) -> dict:
        return {
            "space": {
                "num_op_layers": self.space.num_op_layers,
                "operations": list(self.space.operations),
            },
            "hidden": self.hidden,
            "latent": self.latent,
            "d_op": self.d_op,
            "embedding": self.embedding_kind,
            "encoder": self.encoder_kind,
            "gcn_rounds": self.gcn_rounds,
            "score_input_edges": self.score_input_edges,
        }

    def save(self, path: str) -> None:
        save_checkpoint(path, self.params.state_dict(), {"model": self.config_dict()})

    @classmethod
    def load(cls, path: str) -> "VaeModel":
        meta, arrays = load_checkpoint(path)
        cfg = meta["model"]
        space = SearchSpace(cfg["space"]["num_op_layers"], tuple(cfg["space"]["operations"]))
        model = cls(
            space,
            hidden=cfg["hidden"],
            latent=cfg["latent"],
            d_op=cfg["d_op"],
            embedding_kind=cfg["embedding"],
            encoder_kind=cfg["encoder"],
            gcn_rounds=cfg["gcn_rounds"],
            score_input_edges=cfg["score_input_edges"],
            rng=np.random.default_rng(0),
        )
        model.params.load_state_dict(arrays)
        return model


def _register_linear(block: ParameterBlock, name: str, layer: Linear) -> None:
    block.register(f"{name}.w", layer.w)
    if layer.b is not None:
        block.register(f"{name}.b", layer.b)


def _register_gru(block: ParameterBlock, name: str, gru) -> None:
    block.register(f"{name}.w_ih", gru.w_ih)
    block.register(f"{name}.w_hh", gru.w_hh)
    block.register(f"{name}.b_ih", gru.b_ih)
    block.register(f"{name}.b_hh", gru.b_hh)


def _register_mlp(block: ParameterBlock, name: str, mlp: MlpParams) -> None:
    for i, layer in enumerate(mlp.layers):
        _register_linear(block, f"{name}{i}", layer)


def batch_arrays(dags: Sequence[ArchitectureDag]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a batch of same-size DAGs into (ops, adjacency) arrays."""
    if not dags:
        raise ValueError("empty batch")
    n = dags[0].num_nodes
    if any(d.num_nodes != n for d in dags):
        raise ValueError("batched DAGs must share one node count")
    ops = np.array([d.op_of_node for d in dags], dtype=np.intp)
    adj = np.zeros((len(dags), n, n), dtype=np.float64)
    for i, d in enumerate(dags):
        for s, t in d.edges:
            adj[i, s, t] = 1.0
    return ops, adj


def _require_valid(dag: ArchitectureDag) -> None:
    report = validate(dag)
    if not report.is_valid:
        raise InvalidDag("; ".join(report.violations))


# ---------------------------------------------------------------------------
# encoding


def _encode_batch(model: VaeModel, ops: np.ndarray, adj: np.ndarray, trace=None):
    if model.encoder_kind == "async":
        return _encode_batch_async(model, ops, adj, trace)
    return _encode_batch_gcn(model, ops, adj)


def _encode_batch_async(model: VaeModel, ops: np.ndarray, adj: np.ndarray, trace=None):
    b, n = ops.shape
    hidden = model.hidden
    w = model.table.weights
    emb_cols = [ad.gather_rows(w, ops[:, t]) for t in range(n)]
    states: list[Tensor] = []
    for t in range(n):
        gi = ad.add(ad.matmul(emb_cols[t], model.enc_gru.w_ih), model.enc_gru.b_ih)
        if t == 0:
            h_in = ad.zeros((b, hidden))
        else:
            # messages stacked source-major in ascending source order
            msgs = ad.concat(
                [ad.concat([states[v], emb_cols[v]], axis=1) for v in range(t)], axis=0
            )
            gates = ad.sigmoid(affine(model.enc_gate, msgs))
            mapped = affine(model.enc_map, msgs)
            mask = adj[:, :t, t].T.reshape(t * b, 1)
            terms = ad.mul(ad.mul(gates, mapped), mask)
            h_in = ad.tsum(ad.reshape(terms, (t, b, hidden)), axis=0)
        states.append(ad.gru_gates(gi, h_in, model.enc_gru.w_hh, model.enc_gru.b_hh))
        if trace is not None:
            trace.append(t)
    readout = states[n - 1]
    mu = affine(model.head_mu, readout)
    log_var = ad.clip(affine(model.head_var, readout), -10.0, 10.0)
    return mu, log_var


def _gcn_normalize(adj: np.ndarray) -> np.ndarray:
    """Symmetrically normalized direction-augmented adjacency with self loops."""
    b, n, _ = adj.shape
    sym = adj + adj.transpose(0, 2, 1) + np.eye(n)[None, :, :]
    dinv = 1.0 / np.sqrt(sym.sum(axis=2))
    return dinv[:, :, None] * sym * dinv[:, None, :]


def _encode_batch_gcn(model: VaeModel, ops: np.ndarray, adj: np.ndarray):
    b, n = ops.shape
    a_hat = _gcn_normalize(adj)
    h = ad.gather_rows(model.table.weights, ops.reshape(-1))
    for layer in model.gcn_layers:
        h = ad.relu(ad.matmul(ad.batch_propagate(a_hat, h), layer.w))
    pooled = ad.mul(ad.tsum(ad.reshape(h, (b, n, model.hidden)), axis=1), 1.0 / n)
    mu = affine(model.head_mu, pooled)
    log_var = ad.clip(affine(model.head_var, pooled), -10.0, 10.0)
    return mu, log_var


def encode_async(model: VaeModel, dag: ArchitectureDag, trace=None):
    """Posterior moments from the sequential message-passing encoder."""
    _require_valid(dag)
    ops, adj = batch_arrays([dag])
    with ad.no_grad():
        mu, log_var = _encode_batch_async(model, ops, adj, trace)
    return mu.data[0], log_var.data[0]


def encode_gcn(model: VaeModel, dag: ArchitectureDag):
    """Posterior moments from the graph-convolution encoder."""
    _require_valid(dag)
    ops, adj = batch_arrays([dag])
    with ad.no_grad():
        mu, log_var = _encode_batch_gcn(model, ops, adj)
    return mu.data[0], log_var.data[0]


def encode(
    model: VaeModel, dag: ArchitectureDag, rng: np.random.Generator | None = None
) -> LatentPoint:
    """Encode one DAG; draws a reparameterized sample when an rng is given."""
    if model.encoder_kind == "async":
        mu, log_var = encode_async(model, dag)
    else:
        mu, log_var = encode_gcn(model, dag)
    if rng is None:
        return LatentPoint(mu, log_var)
    eps = rng.standard_normal(mu.shape)
    z = mu + np.exp(0.5 * log_var) * eps
    return LatentPoint(mu, log_var, z, eps)


def encode_corpus(
    model: VaeModel, dags: Sequence[ArchitectureDag], chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior moments for a whole corpus, chunked; returns (mu, log_var)."""
    for dag in dags:
        _require_valid(dag)
    mus, lvs = [], []
    with ad.no_grad():
        for start in range(0, len(dags), chunk):
            ops, adj = batch_arrays(dags[start : start + chunk])
            mu, lv = _encode_batch(model, ops, adj)
            mus.append(mu.data)
            lvs.append(lv.data)
    return np.concatenate(mus, axis=0), np.concatenate(lvs, axis=0)


def reparameterize(mu, log_var, rng: np.random.Generator):
    """z = mu + exp(0.5 * log_var) * eps; differentiable when given Tensors."""
    if isinstance(mu, Tensor) or isinstance(log_var, Tensor):
        mu_t, lv_t = ad.as_tensor(mu), ad.as_tensor(log_var)
        eps = rng.standard_normal(mu_t.shape)
        return ad.add(mu_t, ad.mul(ad.exp(ad.mul(lv_t, 0.5)), eps))
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * log_var) * eps


# ---------------------------------------------------------------------------
# decoding


def _np_linear(layer: Linear, x: np.ndarray) -> np.ndarray:
    out = x @ layer.w.data
    if layer.b is not None:
        out = out + layer.b.data
    return out


def _np_mlp(mlp: MlpParams, x: np.ndarray) -> np.ndarray:
    out = x
    for i, layer in enumerate(mlp.layers):
        out = _np_linear(layer, out)
        if i < len(mlp.layers) - 1:
            out = np.maximum(out, 0.0)
    return out


def _np_gru(gi: np.ndarray, h: np.ndarray, w_hh: np.ndarray, b_hh: np.ndarray) -> np.ndarray:
    gh = h @ w_hh + b_hh
    gi_r, gi_z, gi_n = np.split(gi, 3, axis=1)
    gh_r, gh_z, gh_n = np.split(gh, 3, axis=1)
    r = _sigmoid(gi_r + gh_r)
    z = _sigmoid(gi_z + gh_z)
    n = np.tanh(gi_n + r * gh_n)
    return (1.0 - z) * n + z * h


def _np_gated_term(model: VaeModel, h_k: np.ndarray, emb_k: np.ndarray) -> np.ndarray:
    msg = np.concatenate([h_k, emb_k], axis=1)
    gate = _sigmoid(_np_linear(model.dec_gate, msg))
    return gate * (msg @ model.dec_map.w.data)


def decode_batch(
    model: VaeModel,
    z: np.ndarray,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    max_nodes: int | None = None,
) -> list[ArchitectureDag]:
    """Generate one DAG per latent row.

    Greedy mode takes the argmax type and adds an edge when its probability
    exceeds 0.5; stochastic mode samples both. The input type is never
    emitted, the last slot is forced to the output type, and on stop every
    node without a successor is wired to the output node.
    """
    if mode not in ("greedy", "stochastic"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "stochastic" and rng is None:
        raise ValueError("stochastic decoding needs an rng")
    space = model.space
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    rows = z.shape[0]
    n = space.num_nodes if max_nodes is None else max_nodes
    if n < 2:
        raise ValueError("max_nodes must be at least 2")
    hidden = model.hidden
    emb_w = model.table.weights.data
    w_ih, w_hh = model.dec_gru.w_ih.data, model.dec_gru.w_hh.data
    b_ih, b_hh = model.dec_gru.b_ih.data, model.dec_gru.b_hh.data

    ops = np.full((rows, n), -1, dtype=np.intp)
    ops[:, 0] = space.input_type
    adj = np.zeros((rows, n, n), dtype=np.float64)
    length = np.full(rows, n, dtype=np.intp)
    alive = np.ones(rows, dtype=bool)

    h_nodes = np.zeros((n, rows, hidden))
    init_state = np.tanh(_np_linear(model.dec_init, z))
    gi0 = emb_w[space.input_type] @ w_ih + b_ih
    h_nodes[0] = _np_gru(np.broadcast_to(gi0, (rows, gi0.size)), init_state, w_hh, b_hh)

    low = 0 if model.score_input_edges else 1
    for t in range(1, n):
        logits = _np_mlp(model.type_mlp, h_nodes[t - 1])
        logits[:, space.input_type] = -np.inf
        if t == n - 1:
            types = np.full(rows, space.output_type, dtype=np.intp)
        elif mode == "greedy":
            types = logits.argmax(axis=1)
        else:
            shifted = logits - logits.max(axis=1, keepdims=True)
            probs = np.exp(shifted)
            probs /= probs.sum(axis=1, keepdims=True)
            u = rng.random(rows)
            types = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
            types = np.minimum(types, space.num_types - 1)
        emitted_output = types == space.output_type
        active = alive & ~emitted_output
        finished = alive & emitted_output
        ops[alive, t] = types[alive]

        gi_t = emb_w[np.maximum(ops[:, t], 0)] @ w_ih + b_ih
        h_in = np.zeros((rows, hidden))
        h_t = _np_gru(gi_t, h_in, w_hh, b_hh)
        if active.any():
            for k in range(t - 1, low - 1, -1):
                pair = np.concatenate([h_nodes[k], h_t], axis=1)
                edge_logit = _np_mlp(model.edge_mlp, pair)[:, 0]
                p_edge = _sigmoid(edge_logit)
                if mode == "greedy":
                    want = p_edge > 0.5
                else:
                    want = rng.random(rows) < p_edge
                add_edge = want & active
                adj[add_edge, k, t] = 1.0
                emb_k = emb_w[np.maximum(ops[:, k], 0)]
                term = _np_gated_term(model, h_nodes[k], emb_k)
                h_in = h_in + term * add_edge[:, None]
                h_t = _np_gru(gi_t, h_in, w_hh, b_hh)
            if low == 1 and t == 1:
                # the first interior node always hangs off the input node
                adj[active, 0, 1] = 1.0
                emb_in = np.broadcast_to(emb_w[space.input_type], (rows, emb_w.shape[1]))
                term = _np_gated_term(model, h_nodes[0], emb_in)
                h_in = h_in + term * active[:, None]
                h_t = _np_gru(gi_t, h_in, w_hh, b_hh)
        h_nodes[t] = h_t
        length[finished] = t + 1
        alive = active
        if not alive.any():
            break

    out: list[ArchitectureDag] = []
    for r in range(rows):
        m = int(length[r])
        row_ops = tuple(int(v) for v in ops[r, :m])
        edges = {(int(s), int(d)) for s, d in zip(*np.nonzero(adj[r, :m, :m]))}
        complete_loose_ends(m, edges)
        out.append(ArchitectureDag(row_ops, frozenset(edges)))
    return out


def decode(
    model: VaeModel,
    z: np.ndarray,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    max_nodes: int | None = None,
) -> ArchitectureDag:
    """Generate a single DAG from one latent vector."""
    return decode_batch(model, np.asarray(z)[None, :], mode, rng, max_nodes)[0]


# ---------------------------------------------------------------------------
# teacher-forced likelihood


def _teacher_nll_batch(
    model: VaeModel, z: Tensor, ops: np.ndarray, adj: np.ndarray
) -> tuple[Tensor, Tensor, Tensor]:
    """Per-row negative log-likelihood following the true graph.

    Returns (total, type_part, edge_part), each a (B,) tensor. Type emissions
    are scored for nodes 1..n-1; edge slots are scored for interior target
    nodes only, since generation wires the output node by loose-end
    completion rather than by scored decisions.
    """
    b, n = ops.shape
    hidden = model.hidden
    w = model.table.weights
    emb_cols = [ad.gather_rows(w, ops[:, t]) for t in range(n)]
    gi_cols = [
        ad.add(ad.matmul(emb_cols[t], model.dec_gru.w_ih), model.dec_gru.b_ih)
        for t in range(n - 1)
    ]
    init_state = ad.tanh(affine(model.dec_init, z))
    states = [ad.gru_gates(gi_cols[0], init_state, model.dec_gru.w_hh, model.dec_gru.b_hh)]

    type_terms: list[Tensor] = []
    edge_terms: list[Tensor] = []
    low = 0 if model.score_input_edges else 1
    for t in range(1, n):
        logits = mlp_forward(model.type_mlp, states[t - 1])
        type_terms.append(ad.softmax_cross_entropy(logits, ops[:, t]))
        if t == n - 1:
            break
        h_in = ad.zeros((b, hidden))
        h_t = ad.gru_gates(gi_cols[t], h_in, model.dec_gru.w_hh, model.dec_gru.b_hh)
        for k in range(t - 1, low - 1, -1):
            pair = ad.concat([states[k], h_t], axis=1)
            edge_logit = mlp_forward(model.edge_mlp, pair)
            target = adj[:, k, t]
            edge_terms.append(ad.reshape(ad.bce_with_logits(edge_logit, target[:, None]), (b,)))
            h_in, h_t = _accumulate_message(model, gi_cols[t], h_in, states[k], emb_cols[k], target)
        if low == 1 and t == 1:
            h_in, h_t = _accumulate_message(
                model, gi_cols[t], h_in, states[0], emb_cols[0], adj[:, 0, 1]
            )
        states.append(h_t)

    type_part = type_terms[0]
    for term in type_terms[1:]:
        type_part = ad.add(type_part, term)
    if edge_terms:
        edge_part = edge_terms[0]
        for term in edge_terms[1:]:
            edge_part = ad.add(edge_part, term)
    else:
        edge_part = ad.zeros(b)
    return ad.add(type_part, edge_part), type_part, edge_part


def _accumulate_message(model, gi_t, h_in, h_k, emb_k, mask_np):
    msg = ad.concat([h_k, emb_k], axis=1)
    gate = ad.sigmoid(affine(model.dec_gate, msg))
    term = ad.mul(ad.mul(gate, affine(model.dec_map, msg)), mask_np[:, None])
    h_in = ad.add(h_in, term)
    h_t = ad.gru_gates(gi_t, h_in, model.dec_gru.w_hh, model.dec_gru.b_hh)
    return h_in, h_t


def teacher_forced_nll(model: VaeModel, z, target: ArchitectureDag):
    """Negative log-likelihood of the target under teacher forcing.

    Returns (total, breakdown); total is a scalar Tensor so callers can both
    read the value and backpropagate through it, the breakdown holds floats.
    """
    _require_valid(target)
    z_t = ad.as_tensor(z)
    if z_t.ndim == 1:
        z_t = ad.reshape(z_t, (1, z_t.shape[0]))
    ops, adj = batch_arrays([target])
    total, type_part, edge_part = _teacher_nll_batch(model, z_t, ops, adj)
    total_scalar = ad.tsum(total)
    breakdown = {
        "type_nll": float(type_part.data.sum()),
        "edge_nll": float(edge_part.data.sum()),
        "total": float(total_scalar.data),
    }
    return total_scalar, breakdown
