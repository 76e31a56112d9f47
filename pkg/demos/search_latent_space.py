"""Bayesian optimization over the learned latent space.

Trains a small VAE, fits a GP surrogate on encoded architectures, and runs
batch expected-improvement search against the synthetic oracle, then
compares with uniform random sampling at the same evaluation budget.
"""

import numpy as np

from dagspace.rng import substream
from dagspace.search import (
    OracleConfig,
    attach_synthetic_perf,
    bo_loop,
    predictive_quality,
    random_search_baseline,
    seed_evaluations,
)
from dagspace.model import encode_corpus
from dagspace.space import SearchSpace, sample_random
from dagspace.train import TrainConfig, iterated_training

space = SearchSpace(num_op_layers=3, operations=("conv3x3", "conv5x5", "maxpool3x3"))
rng = substream(3, "data")
dags = [sample_random(space, rng) for _ in range(400)]
oracle = OracleConfig().with_stats_from(dags)
corpus = attach_synthetic_perf(dags, oracle, space)

config = TrainConfig(
    epochs_per_iteration=30,
    iterations=1,
    batch_size=16,
    learning_rate=1e-3,
    kl_weight=0.01,
    hidden=32,
    latent=12,
    d_op=2,
    seed=3,
)
model, _, _ = iterated_training(config, corpus, space)

# how predictable is performance from the latent position?
mu, _ = encode_corpus(model, corpus)
perf = np.array([d.perf for d in corpus])
quality = predictive_quality(mu, perf, n_repeats=5, train_fraction=0.9, seed=3)
print(f"GP held-out Pearson r: {quality.pearson_mean:.3f} +- {quality.pearson_std:.3f}")
print(f"GP held-out RMSE:      {quality.rmse_mean:.4f}")

bo_rng = substream(3, "bo")
latents, seeds, scores = seed_evaluations(model, space, oracle, 20, bo_rng)
result = bo_loop(
    model, space, oracle, latents, seeds, scores,
    iterations=6, batch_size=5, rng=bo_rng,
    log=print,
)

budget = len(result.scores)
_, rand_best = random_search_baseline(space, oracle, budget, substream(4, "bo"))
print(f"\nbudget {budget} evaluations")
print(f"best found by search: {result.best_score:.4f}")
print(f"best found randomly:  {rand_best:.4f}")
for dag, score in result.top_k(3):
    print(f"  {score:.4f}  ops {dag.op_of_node}")
