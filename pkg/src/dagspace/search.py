"""Latent-space architecture search.

A synthetic oracle scores DAGs from structural statistics and per-operation
quality weights. A Gaussian-process surrogate with an RBF kernel models the
oracle over latent codes; candidates are proposed by greedy expected
improvement and decoded back into DAGs for evaluation.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import erfc

from . import metrics
from .model import InvalidDag, VaeModel, decode_batch, encode_corpus
from .space import ArchitectureDag, SearchSpace, canonicalize, sample_random, serialize, validate


class DegenerateKernel(RuntimeError):
    """Kernel matrix could not be factorized even with maximum jitter."""


# ---------------------------------------------------------------------------
# synthetic oracle

DEFAULT_OP_SCORES = {
    "conv3x3": 0.15,
    "conv5x5": 0.30,
    "maxpool3x3": 0.05,
    "avgpool3x3": 0.0,
    "sepconv3x3": 0.10,
    "sepconv5x5": 0.25,
}


@dataclass(frozen=True)
class OracleConfig:
    """Deterministic stand-in for a real performance measurement.

    score = lo + (hi - lo) * sigmoid(w_path * z(L) - w_clust * z(C) + mean op
    score), where z() standardizes against the configured corpus statistics.
    """

    weight_path: float = 1.0
    weight_clustering: float = 1.2
    op_scores: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_OP_SCORES))
    lo: float = 0.70
    hi: float = 0.96
    path_mean: float = 0.0
    path_std: float = 1.0
    clustering_mean: float = 0.0
    clustering_std: float = 1.0

    def with_stats_from(self, dags: Sequence[ArchitectureDag]) -> "OracleConfig":
        """Copy of this config standardizing against the given corpus."""
        paths, clusts = metrics.structural_metrics(dags)
        return replace(
            self,
            path_mean=float(paths.mean()),
            path_std=max(float(paths.std()), 1e-12),
            clustering_mean=float(clusts.mean()),
            clustering_std=max(float(clusts.std()), 1e-12),
        )


def synthetic_perf(dag: ArchitectureDag, config: OracleConfig, space: SearchSpace) -> float:
    report = validate(dag)
    if not report.is_valid:
        raise InvalidDag("; ".join(report.violations))
    z_path = (metrics.avg_path_length(dag) - config.path_mean) / config.path_std
    z_clust = (metrics.clustering_coefficient(dag) - config.clustering_mean) / config.clustering_std
    interior = dag.op_of_node[1:-1]
    if interior:
        names = [space.operations[op] for op in interior]
        missing = [n for n in names if n not in config.op_scores]
        if missing:
            raise ValueError(f"no oracle score for operation {missing[0]!r}")
        op_term = sum(config.op_scores[n] for n in names) / len(names)
    else:
        op_term = 0.0
    s = config.weight_path * z_path - config.weight_clustering * z_clust + op_term
    logistic = 1.0 / (1.0 + np.exp(-s))
    return float(config.lo + (config.hi - config.lo) * logistic)


def attach_synthetic_perf(
    dags: Sequence[ArchitectureDag], config: OracleConfig, space: SearchSpace
) -> list[ArchitectureDag]:
    return [d.with_perf(synthetic_perf(d, config, space)) for d in dags]


# ---------------------------------------------------------------------------
# Gaussian-process surrogate


@dataclass(frozen=True)
class GpConfig:
    length_scale: float = 1.0
    signal_var: float = 1.0
    noise_var: float = 1e-2
    optimize: bool = True
    max_opt_iters: int = 25
    max_exact: int = 2000
    max_hyperopt: int = 1000
    num_inducing: int = 500
    min_noise: float = 1e-6
    max_jitter: float = 1e-6


@dataclass
class GpSurrogate:
    kind: str  # "exact" or "inducing"
    x_train: np.ndarray
    y_mean: float
    length_scale: float
    signal_var: float
    noise_var: float
    chol: tuple
    alpha: np.ndarray  # exact: K^-1 (y - mean); inducing: A^-1 Kuf (y - mean)
    inducing: np.ndarray | None = None


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def _rbf(sqd: np.ndarray, length_scale: float, signal_var: float) -> np.ndarray:
    return signal_var * np.exp(-sqd / (2.0 * length_scale**2))


def _factor_with_jitter(mat: np.ndarray, max_jitter: float) -> tuple[tuple, float]:
    """Cholesky factorization, escalating diagonal jitter up to max_jitter."""
    jitter = 0.0
    n = mat.shape[0]
    while True:
        try:
            return cho_factor(mat + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > max_jitter:
                raise DegenerateKernel(
                    f"kernel matrix not positive definite at jitter {max_jitter:g}"
                ) from None


def _neg_lml(theta: np.ndarray, sqd: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient.

    theta = (log length_scale, log signal_var, log noise_var). Gradient uses
    d(-lml)/d theta_i = 0.5 tr(K^-1 dK) - 0.5 alpha' dK alpha.
    """
    log_ls, log_sv, log_nv = theta
    ls = np.exp(log_ls)
    sv = np.exp(log_sv)
    nv = np.exp(log_nv)
    n = y.shape[0]
    k_rbf = _rbf(sqd, ls, sv)
    k = k_rbf + nv * np.eye(n)
    try:
        chol = cho_factor(k, lower=True)
    except LinAlgError:
        return 1e25, np.zeros(3)
    alpha = cho_solve(chol, y)
    nll = (
        0.5 * float(y @ alpha)
        + float(np.sum(np.log(np.diag(chol[0]))))
        + 0.5 * n * np.log(2.0 * np.pi)
    )
    k_inv = cho_solve(chol, np.eye(n))
    grads = np.zeros(3)
    dk_ls = k_rbf * (sqd / ls**2)
    grads[0] = 0.5 * float(np.sum(k_inv * dk_ls)) - 0.5 * float(alpha @ dk_ls @ alpha)
    grads[1] = 0.5 * float(np.sum(k_inv * k_rbf)) - 0.5 * float(alpha @ k_rbf @ alpha)
    grads[2] = nv * (0.5 * float(np.trace(k_inv)) - 0.5 * float(alpha @ alpha))
    return nll, grads


_THETA_BOUNDS = [(np.log(1e-2), np.log(1e3)), (np.log(1e-4), np.log(1e3)), (np.log(1e-8), np.log(1.0))]


def _optimize_hyperparams(
    x: np.ndarray, y: np.ndarray, config: GpConfig, rng: np.random.Generator
) -> tuple[float, float, float]:
    if x.shape[0] > config.max_hyperopt:
        idx = rng.permutation(x.shape[0])[: config.max_hyperopt]
        x, y = x[idx], y[idx]
    sqd = _sq_dists(x, x)
    theta0 = np.log([config.length_scale, config.signal_var, config.noise_var])
    result = minimize(
        _neg_lml,
        theta0,
        args=(sqd, y),
        jac=True,
        method="L-BFGS-B",
        bounds=_THETA_BOUNDS,
        options={"maxiter": config.max_opt_iters},
    )
    theta = result.x if np.isfinite(result.fun) else theta0
    ls, sv, nv = np.exp(theta)
    return float(ls), float(sv), float(nv)


def fit_gp(
    latents: np.ndarray,
    targets: np.ndarray,
    config: GpConfig = GpConfig(),
    rng: np.random.Generator | None = None,
) -> GpSurrogate:
    """Fit the surrogate: exact inference up to config.max_exact points,
    otherwise an inducing-point (subset-of-regressors) approximation with
    k-means centroids."""
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad training shapes {x.shape} and {y.shape}")
    if x.shape[0] == 0:
        raise ValueError("no training points")
    if rng is None:
        rng = np.random.default_rng(0)
    y_mean = float(y.mean())
    yc = y - y_mean
    if config.optimize:
        ls, sv, nv = _optimize_hyperparams(x, yc, config, rng)
    else:
        ls, sv, nv = config.length_scale, config.signal_var, config.noise_var
    nv = max(nv, config.min_noise)
    n = x.shape[0]
    if n <= config.max_exact:
        k = _rbf(_sq_dists(x, x), ls, sv) + nv * np.eye(n)
        chol, _ = _factor_with_jitter(k, config.max_jitter)
        alpha = cho_solve(chol, yc)
        return GpSurrogate("exact", x, y_mean, ls, sv, nv, chol, alpha)
    m = min(config.num_inducing, n)
    if m >= n:
        xu = x.copy()
    else:
        xu, _ = kmeans2(x, m, minit="++", seed=rng)
    kuu = _rbf(_sq_dists(xu, xu), ls, sv)
    kuf = _rbf(_sq_dists(xu, x), ls, sv)
    a = nv * kuu + kuf @ kuf.T
    chol, _ = _factor_with_jitter(a, max(config.max_jitter, nv * config.max_jitter))
    alpha = cho_solve(chol, kuf @ yc)
    return GpSurrogate("inducing", x, y_mean, ls, sv, nv, chol, alpha, inducing=xu)


def gp_predict(gp: GpSurrogate, xq: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the latent function at query points."""
    xq = np.asarray(xq, dtype=np.float64)
    if xq.ndim == 1:
        xq = xq[None, :]
    means = np.empty(xq.shape[0])
    variances = np.empty(xq.shape[0])
    base = gp.x_train if gp.kind == "exact" else gp.inducing
    for start in range(0, xq.shape[0], chunk):
        q = xq[start : start + chunk]
        ks = _rbf(_sq_dists(base, q), gp.length_scale, gp.signal_var)
        mean = ks.T @ gp.alpha + gp.y_mean
        if gp.kind == "exact":
            v = cho_solve(gp.chol, ks)
            var = gp.signal_var - np.sum(ks * v, axis=0)
        else:
            v = cho_solve(gp.chol, ks)
            var = gp.noise_var * np.sum(ks * v, axis=0)
        if var.min() < -1e-8:
            warnings.warn(f"predictive variance clipped from {var.min():.3e}", RuntimeWarning)
        means[start : start + chunk] = mean
        variances[start : start + chunk] = np.maximum(var, 0.0)
    return means, variances


# ---------------------------------------------------------------------------
# acquisition


def _norm_cdf(u: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(-u / np.sqrt(2.0))


def _norm_pdf(u: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


def expected_improvement(mean: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    """Closed-form EI for maximization; degenerates to max(mean - best, 0)
    where the variance is zero."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    improvement = mean - best
    sigma = np.sqrt(np.maximum(var, 0.0))
    out = np.maximum(improvement, 0.0)
    pos = sigma > 0.0
    u = improvement[pos] / sigma[pos]
    out[pos] = improvement[pos] * _norm_cdf(u) + sigma[pos] * _norm_pdf(u)
    return out


def propose_batch(
    gp: GpSurrogate,
    latents: np.ndarray,
    scores: np.ndarray,
    batch_size: int,
    rng: np.random.Generator,
    pool_size: int = 10000,
    perturb_top: int = 10,
    perturb_copies: int = 10,
    perturb_sigma: float = 0.3,
    distance_fraction: float = 0.1,
) -> np.ndarray:
    """Greedy EI selection over a candidate pool.

    The pool mixes fresh prior draws with Gaussian perturbations of the
    best-scoring known latents. Selected candidates must keep a minimum
    pairwise distance (a fraction of the pool's mean pairwise distance) so a
    batch does not collapse onto one optimum.
    """
    dim = latents.shape[1]
    pool = rng.standard_normal((pool_size, dim))
    k = min(perturb_top, latents.shape[0])
    if k > 0 and perturb_copies > 0:
        top = np.argsort(scores, kind="stable")[::-1][:k]
        anchors = np.repeat(latents[top], perturb_copies, axis=0)
        perturbed = anchors + perturb_sigma * rng.standard_normal(anchors.shape)
        pool = np.vstack([pool, perturbed])
    mean, var = gp_predict(gp, pool)
    ei = expected_improvement(mean, var, float(np.max(scores)))
    sub = pool[: min(256, pool.shape[0])]
    pair = _sq_dists(sub, sub)
    mean_dist = float(np.sqrt(pair[np.triu_indices(sub.shape[0], k=1)]).mean())
    min_dist = distance_fraction * mean_dist
    order = np.argsort(ei, kind="stable")[::-1]
    selected: list[int] = []
    for idx in order:
        if len(selected) == batch_size:
            break
        cand = pool[idx]
        if all(np.linalg.norm(cand - pool[j]) >= min_dist for j in selected):
            selected.append(int(idx))
    for idx in order:  # distance floor exhausted the pool; fill greedily
        if len(selected) == batch_size:
            break
        if int(idx) not in selected:
            selected.append(int(idx))
    return pool[selected]


# ---------------------------------------------------------------------------
# optimization loop


@dataclass(frozen=True)
class BoHistoryRow:
    iteration: int
    evaluations: int
    best_score: float
    batch_mean_score: float


@dataclass
class BoResult:
    best_dag: ArchitectureDag | None
    best_score: float
    history: list[BoHistoryRow]
    evaluated: list[tuple[ArchitectureDag, float]]
    latents: np.ndarray
    scores: np.ndarray

    def top_k(self, k: int = 5) -> list[tuple[ArchitectureDag, float]]:
        """Best k evaluated DAGs, distinct by canonical form, best first."""
        seen: set[bytes] = set()
        ranked = sorted(self.evaluated, key=lambda pair: -pair[1])
        out = []
        for dag, score in ranked:
            form = canonicalize(dag)
            if form in seen:
                continue
            seen.add(form)
            out.append((dag, score))
            if len(out) == k:
                break
        return out


def bo_loop(
    model: VaeModel,
    space: SearchSpace,
    oracle: OracleConfig,
    init_latents: np.ndarray,
    init_dags: Sequence[ArchitectureDag],
    init_scores: np.ndarray,
    iterations: int = 10,
    batch_size: int = 10,
    gp_config: GpConfig = GpConfig(),
    rng: np.random.Generator | None = None,
    log: Callable[[str], None] | None = None,
) -> BoResult:
    """Iterate surrogate fitting, EI proposal, greedy decoding, and oracle
    evaluation, starting from an already scored seed set.

    Proposals that decode to invalid DAGs are kept in the surrogate's
    training set at the oracle's range minimum so the model learns to avoid
    that region.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    latents = np.asarray(init_latents, dtype=np.float64).copy()
    scores = np.asarray(init_scores, dtype=np.float64).copy()
    if latents.shape[0] != scores.shape[0] or latents.shape[0] != len(init_dags):
        raise ValueError("seed latents, DAGs, and scores must align")
    if latents.shape[0] == 0:
        raise ValueError("need a scored seed set")
    evaluated = list(zip(list(init_dags), [float(s) for s in scores]))
    history = [
        BoHistoryRow(0, len(scores), float(scores.max()), float(scores.mean())),
    ]
    for it in range(1, iterations + 1):
        gp = fit_gp(latents, scores, gp_config, rng)
        batch = propose_batch(gp, latents, scores, batch_size, rng)
        decoded = decode_batch(model, batch, mode="greedy")
        batch_scores = np.empty(batch.shape[0])
        for i, dag in enumerate(decoded):
            if validate(dag).is_valid:
                score = synthetic_perf(dag, oracle, space)
                evaluated.append((dag, score))
            else:
                score = oracle.lo
            batch_scores[i] = score
        latents = np.vstack([latents, batch])
        scores = np.concatenate([scores, batch_scores])
        history.append(
            BoHistoryRow(it, len(scores), float(scores.max()), float(batch_scores.mean()))
        )
        if log is not None:
            row = history[-1]
            log(
                f"iteration {row.iteration}: evaluations={row.evaluations} "
                f"best={row.best_score:.6f} batch_mean={row.batch_mean_score:.6f}"
            )
    best_dag, best_score = max(evaluated, key=lambda pair: pair[1])
    return BoResult(best_dag, best_score, history, evaluated, latents, scores)


def seed_evaluations(
    model: VaeModel,
    space: SearchSpace,
    oracle: OracleConfig,
    n_seed: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[ArchitectureDag], np.ndarray]:
    """Random architectures scored by the oracle and embedded as posterior
    means, forming the initial surrogate training set."""
    dags = [sample_random(space, rng) for _ in range(n_seed)]
    mu, _ = encode_corpus(model, dags)
    scores = np.array([synthetic_perf(d, oracle, space) for d in dags])
    return mu, dags, scores


def random_search_baseline(
    space: SearchSpace, oracle: OracleConfig, n_evals: int, rng: np.random.Generator
) -> tuple[ArchitectureDag, float]:
    best = None
    best_score = -np.inf
    for _ in range(n_evals):
        dag = sample_random(space, rng)
        score = synthetic_perf(dag, oracle, space)
        if score > best_score:
            best, best_score = dag, score
    return best, float(best_score)


# ---------------------------------------------------------------------------
# held-out predictive quality


@dataclass(frozen=True)
class PredictiveQuality:
    rmse_mean: float
    rmse_std: float
    pearson_mean: float
    pearson_std: float
    n_repeats: int


def predictive_quality(
    latents: np.ndarray,
    targets: np.ndarray,
    n_repeats: int = 10,
    train_fraction: float = 0.9,
    seed: int = 0,
    gp_config: GpConfig = GpConfig(),
) -> PredictiveQuality:
    """RMSE and Pearson's r of GP predictions on random held-out splits."""
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    cut = int(round(train_fraction * n))
    if cut < 1 or cut >= n:
        raise ValueError(f"split of {n} points leaves an empty side")
    rng = np.random.default_rng(seed)
    rmses = np.empty(n_repeats)
    pearsons = np.empty(n_repeats)
    for rep in range(n_repeats):
        perm = rng.permutation(n)
        tr, te = perm[:cut], perm[cut:]
        gp = fit_gp(x[tr], y[tr], gp_config, rng)
        mean, _ = gp_predict(gp, x[te])
        rmses[rep] = metrics.rmse(mean, y[te])
        pearsons[rep] = metrics.pearson_r(mean, y[te])
    return PredictiveQuality(
        float(rmses.mean()),
        float(rmses.std()),
        float(pearsons.mean()),
        float(pearsons.std()),
        n_repeats,
    )


# ---------------------------------------------------------------------------
# artifacts


def write_bo_history_csv(path: str, history: Sequence[BoHistoryRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "evaluations", "best_score", "batch_mean_score"])
        for row in history:
            writer.writerow(
                [row.iteration, row.evaluations, repr(row.best_score), repr(row.batch_mean_score)]
            )


def write_top_k_jsonl(path: str, top: Sequence[tuple[ArchitectureDag, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dag, score in top:
            fh.write(serialize(dag.with_perf(score)) + "\n")


def load_json_config(path: str, cls, what: str):
    """Build a dataclass config from a flat JSON object file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{what} config must be a JSON object")
    valid = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(raw) - valid
    if unknown:
        raise ValueError(f"unknown {what} config key {sorted(unknown)[0]!r}")
    return cls(**raw)
