"""Relate synthetic performance to graph structure over a large corpus."""

import numpy as np

from dagspace.metrics import correlation_report, pearson_r, structural_metrics
from dagspace.rng import substream
from dagspace.search import OracleConfig, attach_synthetic_perf
from dagspace.space import SearchSpace, sample_random

space = SearchSpace()
rng = substream(1, "data")
dags = [sample_random(space, rng) for _ in range(5000)]
oracle = OracleConfig().with_stats_from(dags)
corpus = attach_synthetic_perf(dags, oracle, space)

perf = np.array([d.perf for d in corpus])
lengths, clusterings = structural_metrics(corpus)
print(f"r(perf, avg path length): {pearson_r(perf, lengths):+.3f}")
print(f"r(perf, clustering):      {pearson_r(perf, clusterings):+.3f}")

report = correlation_report(corpus, num_bins=5)
print("\nper-bin means, worst to best fifth of the corpus:")
print(f"{'bin':>3} {'n':>5} {'perf':>8} {'path len':>9} {'clustering':>10}")
for row in report.bins:
    print(
        f"{row.index:>3} {row.count:>5} {row.mean_perf:>8.4f} "
        f"{row.mean_path_length:>9.4f} {row.mean_clustering:>10.4f}"
    )
