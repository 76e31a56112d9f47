"""Evaluation metrics.

Generative quality (reconstruction accuracy, prior validity, uniqueness),
predictive quality (RMSE, Pearson's r), structural graph statistics (average
shortest-path length, global clustering coefficient), per-performance-bin
correlation reports, and a 2-D PCA projection of the latent space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import VaeModel, decode_batch, encode_corpus
from .space import ArchitectureDag, canonicalize, validate


class EmptyTestSet(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


# ---------------------------------------------------------------------------
# generative quality


def reconstruction_accuracy(
    model: VaeModel,
    test_dags: Sequence[ArchitectureDag],
    samples_z: int = 10,
    decodes_per_z: int = 10,
    rng: np.random.Generator | None = None,
) -> float:
    """Fraction of stochastic decodes that reproduce their source, in percent.

    Each DAG is encoded once; samples_z posterior samples are drawn and each
    is decoded decodes_per_z times. A decode counts when it is canonically
    identical to the source.
    """
    if not test_dags:
        raise EmptyTestSet("reconstruction accuracy needs at least one DAG")
    if rng is None:
        rng = np.random.default_rng(0)
    mu, log_var = encode_corpus(model, list(test_dags))
    sigma = np.exp(0.5 * log_var)
    targets = [canonicalize(d) for d in test_dags]
    tiled_targets = [t for t in targets for _ in range(decodes_per_z)]
    hits = 0
    total = 0
    for _ in range(samples_z):
        z = mu + sigma * rng.standard_normal(mu.shape)
        tiled = np.repeat(z, decodes_per_z, axis=0)
        decodes = decode_batch(model, tiled, mode="stochastic", rng=rng)
        hits += sum(canonicalize(d) == t for d, t in zip(decodes, tiled_targets))
        total += len(decodes)
    return 100.0 * hits / total


def sample_prior_decodes(
    model: VaeModel,
    n_points: int = 1000,
    decodes_per_point: int = 10,
    rng: np.random.Generator | None = None,
    chunk: int = 2500,
) -> list[ArchitectureDag]:
    """Stochastic decodes of prior samples, decodes_per_point per latent."""
    if rng is None:
        rng = np.random.default_rng(0)
    z = rng.standard_normal((n_points, model.latent))
    tiled = np.repeat(z, decodes_per_point, axis=0)
    out: list[ArchitectureDag] = []
    for start in range(0, tiled.shape[0], chunk):
        out.extend(decode_batch(model, tiled[start : start + chunk], mode="stochastic", rng=rng))
    return out


def prior_validity(
    model: VaeModel,
    n_points: int = 1000,
    decodes_per_point: int = 10,
    rng: np.random.Generator | None = None,
) -> float:
    """Percentage of valid DAGs among stochastic decodes of prior samples."""
    decodes = sample_prior_decodes(model, n_points, decodes_per_point, rng)
    valid = sum(validate(d).is_valid for d in decodes)
    return 100.0 * valid / len(decodes)


def uniqueness(valid_decodes: Sequence[ArchitectureDag]) -> float:
    """Percentage of distinct canonical forms among the given valid decodes.

    Undefined on an empty list; returns nan in that case.
    """
    if not valid_decodes:
        return float("nan")
    forms = {canonicalize(d) for d in valid_decodes}
    return 100.0 * len(forms) / len(valid_decodes)


# ---------------------------------------------------------------------------
# predictive quality


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatch(f"shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise LengthMismatch("empty inputs")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise LengthMismatch(f"shapes differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise LengthMismatch("need at least two points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("constant input has no correlation")
    return float(np.sum(xc * yc) / (sx * sy))


# ---------------------------------------------------------------------------
# structural graph statistics


def _adjacency_stack(dags: Sequence[ArchitectureDag]) -> np.ndarray:
    n = dags[0].num_nodes
    adj = np.zeros((len(dags), n, n), dtype=np.float64)
    for i, d in enumerate(dags):
        for s, t in d.edges:
            adj[i, s, t] = 1.0
    return adj


def _path_length_stack(adj: np.ndarray) -> np.ndarray:
    """Mean directed shortest-path distance over ordered pairs, 0 when
    unreachable, for a (B, n, n) stack of adjacency matrices."""
    b, n, _ = adj.shape
    if n < 2:
        return np.zeros(b)
    reached = adj > 0
    dist = reached.astype(np.float64)
    frontier = reached.copy()
    for k in range(2, n):
        if not frontier.any():
            break
        nxt = np.matmul(frontier.astype(np.float64), adj) > 0
        new = nxt & ~reached
        dist += new * float(k)
        reached |= new
        frontier = new
    return dist.sum(axis=(1, 2)) / (n * (n - 1))


def _clustering_stack(adj: np.ndarray) -> np.ndarray:
    """Global transitivity on the undirected projection for a (B, n, n) stack."""
    und = ((adj + adj.transpose(0, 2, 1)) > 0).astype(np.float64)
    triangles = np.einsum("bij,bjk,bki->b", und, und, und) / 6.0
    deg = und.sum(axis=2)
    triples = (deg * (deg - 1.0)).sum(axis=1) / 2.0
    out = np.zeros(adj.shape[0])
    nonzero = triples > 0
    out[nonzero] = 3.0 * triangles[nonzero] / triples[nonzero]
    return out


def avg_path_length(dag: ArchitectureDag) -> float:
    """L = (1 / n(n-1)) * sum of d(u, v) over ordered pairs; unreachable
    pairs contribute 0."""
    if dag.num_nodes < 2:
        return 0.0
    return float(_path_length_stack(_adjacency_stack([dag]))[0])


def clustering_coefficient(dag: ArchitectureDag) -> float:
    """3 * triangles / connected triples, edge direction ignored; 0 when the
    projection has no connected triples."""
    return float(_clustering_stack(_adjacency_stack([dag]))[0])


def structural_metrics(dags: Sequence[ArchitectureDag]) -> tuple[np.ndarray, np.ndarray]:
    """(path length, clustering) arrays for a corpus; mixed sizes allowed."""
    if not dags:
        raise EmptyCorpus("no DAGs")
    paths = np.zeros(len(dags))
    clusts = np.zeros(len(dags))
    by_size: dict[int, list[int]] = {}
    for i, d in enumerate(dags):
        by_size.setdefault(d.num_nodes, []).append(i)
    for indices in by_size.values():
        adj = _adjacency_stack([dags[i] for i in indices])
        paths[indices] = _path_length_stack(adj)
        clusts[indices] = _clustering_stack(adj)
    return paths, clusts


# ---------------------------------------------------------------------------
# correlation report


@dataclass(frozen=True)
class BinRow:
    bin_index: int
    count: int
    perf_min: float
    perf_max: float
    perf_mean: float
    path_mean: float
    path_std: float
    clustering_mean: float
    clustering_std: float


@dataclass(frozen=True)
class CorrelationReport:
    pearson_path: float
    pearson_clustering: float
    bins: tuple[BinRow, ...]
    note: str = ""


def correlation_report(corpus: Sequence[ArchitectureDag], num_bins: int = 6) -> CorrelationReport:
    """Structural metrics against performance, globally and in equal-count
    performance quantile bins."""
    if not corpus:
        raise EmptyCorpus("no DAGs")
    if any(d.perf is None for d in corpus):
        raise ValueError("every DAG needs an attached perf value")
    perf = np.array([d.perf for d in corpus], dtype=np.float64)
    paths, clusts = structural_metrics(corpus)
    note = ""
    if np.all(perf == perf[0]):
        pear_path = float("nan")
        pear_clust = float("nan")
        note = "constant performance: correlations undefined"
        groups = [np.arange(len(corpus))]
    else:
        notes = []
        try:
            pear_path = pearson_r(perf, paths)
        except (ZeroVariance, LengthMismatch):
            pear_path = float("nan")
            notes.append("path length correlation undefined")
        try:
            pear_clust = pearson_r(perf, clusts)
        except (ZeroVariance, LengthMismatch):
            pear_clust = float("nan")
            notes.append("clustering correlation undefined")
        note = "; ".join(notes)
        order = np.argsort(perf, kind="stable")
        groups = [g for g in np.array_split(order, num_bins) if g.size]
    bins = []
    for i, g in enumerate(groups):
        bins.append(
            BinRow(
                bin_index=i,
                count=int(g.size),
                perf_min=float(perf[g].min()),
                perf_max=float(perf[g].max()),
                perf_mean=float(perf[g].mean()),
                path_mean=float(paths[g].mean()),
                path_std=float(paths[g].std()),
                clustering_mean=float(clusts[g].mean()),
                clustering_std=float(clusts[g].std()),
            )
        )
    return CorrelationReport(pear_path, pear_clust, tuple(bins), note)


def write_correlation_csv(path: str, report: CorrelationReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "bin",
                "count",
                "perf_min",
                "perf_max",
                "perf_mean",
                "path_mean",
                "path_std",
                "clustering_mean",
                "clustering_std",
            ]
        )
        for row in report.bins:
            writer.writerow(
                [
                    row.bin_index,
                    row.count,
                    repr(row.perf_min),
                    repr(row.perf_max),
                    repr(row.perf_mean),
                    repr(row.path_mean),
                    repr(row.path_std),
                    repr(row.clustering_mean),
                    repr(row.clustering_std),
                ]
            )


# ---------------------------------------------------------------------------
# latent projection


def latent_projection_2d(model: VaeModel, corpus: Sequence[ArchitectureDag]) -> np.ndarray:
    """PCA of posterior means onto the top two components: rows (x, y, perf).

    Component signs are fixed so the largest-magnitude loading of each
    component is positive, making the projection reproducible.
    """
    if len(corpus) < 3:
        raise ValueError("projection needs at least three DAGs")
    if any(d.perf is None for d in corpus):
        raise ValueError("every DAG needs an attached perf value")
    mu, _ = encode_corpus(model, list(corpus))
    centered = mu - mu.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    for i in range(components.shape[0]):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    coords = centered @ components.T
    perf = np.array([d.perf for d in corpus], dtype=np.float64)
    return np.column_stack([coords, perf])


def write_projection_csv(path: str, rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "perf"])
        for x, y, p in rows:
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(p))])
