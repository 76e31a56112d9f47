"""ELBO training: the KL term, epoch loops, and iterated embedding training.

The iterated schema trains the full model for N epochs, keeps only the
embedding table, re-initializes everything else, and repeats; the table
therefore accumulates structure across iterations while the rest of the
model restarts from scratch each time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import (
    InvalidDag,
    VaeModel,
    _encode_batch,
    _teacher_nll_batch,
    batch_arrays,
)
from .nn import Adam
from .rng import substream
from .space import ArchitectureDag, SearchSpace, validate


class EmptyDataset(ValueError):
    """No training data after the split."""


@dataclass
class TrainConfig:
    """Flat training configuration; also the schema of config files."""

    epochs_per_iteration: int = 300
    iterations: int | None = None  # None: 4 for the async encoder, 1 for gcn
    batch_size: int = 32
    learning_rate: float = 1e-4
    kl_weight: float = 1.0
    seed: int = 0
    encoder: str = "async"
    embedding: str = "learnable"
    hidden: int = 128
    latent: int = 56
    d_op: int = 3
    gcn_rounds: int = 3
    train_fraction: float = 0.9
    carry_all_weights: bool = False
    score_input_edges: bool = True

    def __post_init__(self) -> None:
        if self.epochs_per_iteration < 1:
            raise ValueError("epochs_per_iteration must be >= 1")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.encoder not in ("async", "gcn"):
            raise ValueError(f"unknown encoder kind {self.encoder!r}")
        if self.embedding not in ("learnable", "onehot"):
            raise ValueError(f"unknown embedding kind {self.embedding!r}")

    def resolved_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return 4 if self.encoder == "async" else 1


_BOOL_STRINGS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def parse_config_file(path: str) -> TrainConfig:
    """Read a flat `key = value` file into a TrainConfig.

    Blank lines and `#` comments are ignored. Unknown keys and malformed
    values raise ValueError naming the field.
    """
    known = {f.name: f for f in fields(TrainConfig)}
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config field {key!r}")
            values[key] = _coerce_field(key, val)
    return TrainConfig(**values)


def _coerce_field(key: str, val: str):
    annotations = {f.name: f.type for f in fields(TrainConfig)}
    kind = annotations[key]
    try:
        if key == "iterations":
            return None if val.lower() in ("auto", "none") else int(val)
        if kind == "int":
            return int(val)
        if kind == "float":
            return float(val)
        if kind == "bool":
            return _BOOL_STRINGS[val.lower()]
        return val
    except (ValueError, KeyError):
        raise ValueError(f"invalid value for config field {key!r}: {val!r}") from None


def kl_diag_gaussian(mu, log_var) -> float:
    """Closed-form KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    return float(0.5 * np.sum(np.exp(log_var) + mu * mu - 1.0 - log_var))


def _kl_rows(mu: Tensor, log_var: Tensor) -> Tensor:
    inner = ad.sub(ad.add(ad.exp(log_var), ad.mul(mu, mu)), ad.add(log_var, 1.0))
    return ad.mul(ad.tsum(inner, axis=1), 0.5)


def elbo_loss(
    model: VaeModel,
    dag: ArchitectureDag,
    rng: np.random.Generator,
    kl_weight: float = 1.0,
):
    """One-sample ELBO for a single DAG: (total, recon_nll, kl) as tensors."""
    if not validate(dag).is_valid:
        raise InvalidDag("cannot train on an invalid DAG")
    ops, adj = batch_arrays([dag])
    mu, log_var = _encode_batch(model, ops, adj)
    eps = rng.standard_normal(mu.shape)
    z = ad.add(mu, ad.mul(ad.exp(ad.mul(log_var, 0.5)), eps))
    nll_rows, _, _ = _teacher_nll_batch(model, z, ops, adj)
    recon = ad.tsum(nll_rows)
    kl = ad.tsum(_kl_rows(mu, log_var))
    total = ad.add(recon, ad.mul(kl, kl_weight))
    return total, recon, kl


class EpochRow(NamedTuple):
    epoch: int
    recon_loss: float
    kl: float


def split_dataset(
    dags: Sequence[ArchitectureDag], train_fraction: float, seed: int
) -> tuple[list[ArchitectureDag], list[ArchitectureDag]]:
    """Deterministic shuffled split; the same (fraction, seed) reproduces it."""
    rng = substream(seed, "split")
    order = rng.permutation(len(dags))
    cut = int(round(train_fraction * len(dags)))
    train_idx, eval_idx = order[:cut], order[cut:]
    return [dags[i] for i in train_idx], [dags[i] for i in eval_idx]


def _fit(
    model: VaeModel,
    config: TrainConfig,
    train_dags: Sequence[ArchitectureDag],
    rng: np.random.Generator,
    epoch_offset: int = 0,
) -> list[EpochRow]:
    n = len(train_dags)
    ops_all, adj_all = batch_arrays(list(train_dags))
    opt = Adam(model.trainable_tensors(), lr=config.learning_rate)
    history: list[EpochRow] = []
    for epoch in range(1, config.epochs_per_iteration + 1):
        perm = rng.permutation(n)
        recon_sum = 0.0
        kl_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            ops, adj = ops_all[idx], adj_all[idx]
            mu, log_var = _encode_batch(model, ops, adj)
            eps = rng.standard_normal(mu.shape)
            z = ad.add(mu, ad.mul(ad.exp(ad.mul(log_var, 0.5)), eps))
            nll_rows, _, _ = _teacher_nll_batch(model, z, ops, adj)
            kl_rows = _kl_rows(mu, log_var)
            loss = ad.add(ad.tsum(nll_rows), ad.mul(ad.tsum(kl_rows), config.kl_weight))
            opt.zero_grad()
            loss.backward()
            opt.step()
            recon_sum += float(nll_rows.data.sum())
            kl_sum += float(kl_rows.data.sum())
        history.append(EpochRow(epoch_offset + epoch, recon_sum / n, kl_sum / n))
    return history


def _build_model(config: TrainConfig, space: SearchSpace, rng: np.random.Generator) -> VaeModel:
    return VaeModel(
        space,
        hidden=config.hidden,
        latent=config.latent,
        d_op=config.d_op,
        embedding_kind=config.embedding,
        encoder_kind=config.encoder,
        gcn_rounds=config.gcn_rounds,
        score_input_edges=config.score_input_edges,
        rng=rng,
    )


def train(
    config: TrainConfig, dataset: Sequence[ArchitectureDag], space: SearchSpace
) -> tuple[VaeModel, list[EpochRow]]:
    """Single-pass minibatch Adam training on the train split of the dataset."""
    train_dags, _ = split_dataset(dataset, config.train_fraction, config.seed)
    if not train_dags:
        raise EmptyDataset("no training data")
    model = _build_model(config, space, substream(config.seed, "init"))
    history = _fit(model, config, train_dags, substream(config.seed, "train"))
    return model, history


def iterated_training(
    config: TrainConfig, dataset: Sequence[ArchitectureDag], space: SearchSpace
) -> tuple[VaeModel, list[list[EpochRow]], list[np.ndarray]]:
    """Repeated training with the embedding table carried across iterations.

    Returns the final model, one history per iteration, and a snapshot of the
    table after each iteration. With carry_all_weights every parameter is
    kept; otherwise non-embedding parameters restart fresh per iteration.
    """
    train_dags, _ = split_dataset(dataset, config.train_fraction, config.seed)
    if not train_dags:
        raise EmptyDataset("no training data")
    rng_init = substream(config.seed, "init")
    rng_train = substream(config.seed, "train")
    model = _build_model(config, space, rng_init)
    histories: list[list[EpochRow]] = []
    snapshots: list[np.ndarray] = []
    offset = 0
    for iteration in range(config.resolved_iterations()):
        if iteration > 0 and not config.carry_all_weights:
            model.reinit_non_embedding(rng_init)
        histories.append(_fit(model, config, train_dags, rng_train, epoch_offset=offset))
        offset += config.epochs_per_iteration
        snapshots.append(model.table.weights.data.copy())
    return model, histories, snapshots


def write_history_csv(path: str, histories: Sequence[Sequence[EpochRow]]) -> None:
    """Epoch rows from all iterations concatenated under one global epoch index."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "recon_loss", "kl"])
        for history in histories:
            for row in history:
                writer.writerow([row.epoch, repr(row.recon_loss), repr(row.kl)])
