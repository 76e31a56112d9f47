"""Tests for evaluation metrics: reconstruction, validity, structural
statistics, correlation reporting, and the latent projection."""

import math

import numpy as np
import pytest

from dagspace.metrics import (
    EmptyCorpus,
    EmptyTestSet,
    LengthMismatch,
    ZeroVariance,
    avg_path_length,
    clustering_coefficient,
    correlation_report,
    latent_projection_2d,
    pearson_r,
    prior_validity,
    reconstruction_accuracy,
    rmse,
    sample_prior_decodes,
    structural_metrics,
    uniqueness,
    write_correlation_csv,
    write_projection_csv,
)
from dagspace.model import VaeModel
from dagspace.rng import substream
from dagspace.space import ArchitectureDag, SearchSpace, sample_random

from oracles import bfs_path_length, triple_count_clustering

TRIVIAL = SearchSpace(num_op_layers=0, operations=("a", "b"))
SMALL = SearchSpace(num_op_layers=3, operations=("a", "b", "c"))


def graph(n: int, edges) -> ArchitectureDag:
    return ArchitectureDag(op_of_node=tuple(range(n)), edges=frozenset(edges))


class TestPathLength:
    def test_two_node_chain_is_half(self):
        # d(0,1) = 1 and the reverse pair is unreachable, so L = 1/2
        assert avg_path_length(graph(2, [(0, 1)])) == 0.5

    def test_three_node_chain(self):
        # distances 1, 1, 2 over 6 ordered pairs
        assert avg_path_length(graph(3, [(0, 1), (1, 2)])) == pytest.approx(2 / 3, abs=1e-15)

    def test_diamond(self):
        edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
        assert avg_path_length(graph(4, edges)) == pytest.approx(0.5, abs=1e-15)

    def test_single_node_is_zero(self):
        assert avg_path_length(graph(1, [])) == 0.0

    def test_no_edges_is_zero(self):
        assert avg_path_length(graph(5, [])) == 0.0


class TestClustering:
    def test_triangle_is_one(self):
        assert clustering_coefficient(graph(3, [(0, 1), (0, 2), (1, 2)])) == 1.0

    def test_chain_has_no_triangles(self):
        assert clustering_coefficient(graph(3, [(0, 1), (1, 2)])) == 0.0

    def test_no_triples_gives_zero(self):
        assert clustering_coefficient(graph(2, [(0, 1)])) == 0.0

    def test_direction_is_ignored(self):
        a = clustering_coefficient(graph(3, [(0, 1), (0, 2), (1, 2)]))
        b = clustering_coefficient(graph(3, [(1, 0), (2, 0), (2, 1)]))
        assert a == b == 1.0

    def test_triangle_plus_pendant(self):
        # triangle on {0,1,2} with a pendant edge to 3: triangles = 1,
        # triples = 1 + 3 + 1 + 0 = 5, so transitivity = 3/5
        edges = [(0, 1), (0, 2), (1, 2), (1, 3)]
        assert clustering_coefficient(graph(4, edges)) == pytest.approx(0.6, abs=1e-15)


class TestAgainstBruteForce:
    def test_random_dags_match_oracles(self):
        rng = substream(5, "data")
        dags = [sample_random(SMALL, rng) for _ in range(200)]
        paths, clusts = structural_metrics(dags)
        for dag, lg, cg in zip(dags, paths, clusts):
            edges = sorted(dag.edges)
            assert abs(lg - bfs_path_length(dag.num_nodes, edges)) < 1e-12
            assert abs(cg - triple_count_clustering(dag.num_nodes, edges)) < 1e-12

    def test_mixed_sizes_grouped_correctly(self):
        rng = substream(6, "data")
        mixed = []
        for _ in range(20):
            mixed.append(sample_random(SMALL, rng))
            mixed.append(sample_random(TRIVIAL, rng))
        paths, clusts = structural_metrics(mixed)
        for dag, lg, cg in zip(mixed, paths, clusts):
            assert lg == pytest.approx(avg_path_length(dag), abs=1e-15)
            assert cg == pytest.approx(clustering_coefficient(dag), abs=1e-15)

    def test_empty_corpus_raises(self):
        with pytest.raises(EmptyCorpus):
            structural_metrics([])


class TestPredictiveScalars:
    def test_rmse_hand_value(self):
        assert rmse([1.0, 2.0], [0.0, 2.0]) == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_rmse_zero_on_exact(self):
        assert rmse([3.0, 4.0], [3.0, 4.0]) == 0.0

    def test_rmse_shape_errors(self):
        with pytest.raises(LengthMismatch):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(LengthMismatch):
            rmse([], [])

    def test_pearson_perfect_correlation(self):
        assert pearson_r([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0, abs=1e-15)
        assert pearson_r([1.0, 2.0, 3.0], [5.0, 3.0, 1.0]) == pytest.approx(-1.0, abs=1e-15)

    def test_pearson_matches_numpy(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.normal(size=30)
            y = rng.normal(size=30) + 0.5 * x
            assert pearson_r(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)

    def test_pearson_errors(self):
        with pytest.raises(LengthMismatch):
            pearson_r([1.0, 2.0], [1.0])
        with pytest.raises(LengthMismatch):
            pearson_r([1.0], [1.0])
        with pytest.raises(ZeroVariance):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestUniqueness:
    def test_counts_distinct_canonical_forms(self):
        rng = substream(1, "data")
        a = sample_random(SMALL, rng)
        b = a
        while b.edges == a.edges and b.op_of_node == a.op_of_node:
            b = sample_random(SMALL, rng)
        assert uniqueness([a, a, b, b]) == 50.0
        assert uniqueness([a]) == 100.0

    def test_perf_does_not_affect_identity(self):
        dag = sample_random(SMALL, substream(2, "data"))
        assert uniqueness([dag, dag.with_perf(0.5)]) == 50.0

    def test_empty_is_nan(self):
        assert math.isnan(uniqueness([]))


class TestDecodeMetrics:
    def test_trivial_space_reconstructs_perfectly(self):
        # the 0-op-layer space has a single DAG, so any decode matches it
        model = VaeModel(TRIVIAL, hidden=8, latent=4, d_op=2, rng=np.random.default_rng(0))
        dags = [sample_random(TRIVIAL, np.random.default_rng(1))]
        acc = reconstruction_accuracy(model, dags, samples_z=3, decodes_per_z=2, rng=np.random.default_rng(2))
        assert acc == 100.0

    def test_accuracy_bounded_and_deterministic(self):
        model = VaeModel(SMALL, hidden=12, latent=6, d_op=2, rng=np.random.default_rng(0))
        dags = [sample_random(SMALL, substream(3, "data")) for _ in range(5)]
        a = reconstruction_accuracy(model, dags, samples_z=2, decodes_per_z=3, rng=np.random.default_rng(7))
        b = reconstruction_accuracy(model, dags, samples_z=2, decodes_per_z=3, rng=np.random.default_rng(7))
        assert a == b
        assert 0.0 <= a <= 100.0

    def test_empty_test_set_raises(self):
        model = VaeModel(SMALL, hidden=12, latent=6, d_op=2, rng=np.random.default_rng(0))
        with pytest.raises(EmptyTestSet):
            reconstruction_accuracy(model, [])

    def test_prior_decode_count_and_validity_range(self):
        model = VaeModel(SMALL, hidden=12, latent=6, d_op=2, rng=np.random.default_rng(0))
        decodes = sample_prior_decodes(model, n_points=4, decodes_per_point=3, rng=np.random.default_rng(1))
        assert len(decodes) == 12
        pv = prior_validity(model, n_points=4, decodes_per_point=3, rng=np.random.default_rng(1))
        assert 0.0 <= pv <= 100.0

    def test_trivial_space_prior_always_valid(self):
        model = VaeModel(TRIVIAL, hidden=8, latent=4, d_op=2, rng=np.random.default_rng(0))
        assert prior_validity(model, n_points=5, decodes_per_point=2, rng=np.random.default_rng(1)) == 100.0


class TestCorrelationReport:
    def corpus_with_path_perf(self, n: int = 60) -> list[ArchitectureDag]:
        rng = substream(4, "data")
        dags = [sample_random(SMALL, rng) for _ in range(n)]
        return [d.with_perf(avg_path_length(d)) for d in dags]

    def test_perf_equal_to_path_gives_unit_correlation(self):
        report = correlation_report(self.corpus_with_path_perf(), num_bins=4)
        assert report.pearson_path == pytest.approx(1.0, abs=1e-12)
        assert report.note == ""

    def test_bins_partition_in_perf_order(self):
        corpus = self.corpus_with_path_perf()
        report = correlation_report(corpus, num_bins=4)
        assert sum(row.count for row in report.bins) == len(corpus)
        # equal-count quantile bins differ in size by at most one
        sizes = [row.count for row in report.bins]
        assert max(sizes) - min(sizes) <= 1
        for earlier, later in zip(report.bins, report.bins[1:]):
            assert earlier.perf_max <= later.perf_min
        for row in report.bins:
            assert row.perf_min <= row.perf_mean <= row.perf_max

    def test_constant_perf_is_flagged(self):
        dags = [sample_random(SMALL, substream(8, "data")) for _ in range(10)]
        report = correlation_report([d.with_perf(0.9) for d in dags])
        assert math.isnan(report.pearson_path) and math.isnan(report.pearson_clustering)
        assert "constant performance" in report.note
        assert len(report.bins) == 1 and report.bins[0].count == 10

    def test_more_bins_than_dags(self):
        corpus = self.corpus_with_path_perf(3)
        report = correlation_report(corpus, num_bins=10)
        assert sum(row.count for row in report.bins) == 3
        assert all(row.count > 0 for row in report.bins)

    def test_constant_metric_reported_not_raised(self):
        # every 2-node DAG has the same path length and clustering, so the
        # correlations are undefined but the report must still come back
        rng = substream(11, "data")
        corpus = [sample_random(TRIVIAL, rng).with_perf(float(i)) for i in range(6)]
        report = correlation_report(corpus, num_bins=2)
        assert math.isnan(report.pearson_path) and math.isnan(report.pearson_clustering)
        assert "undefined" in report.note

    def test_missing_perf_rejected(self):
        dag = sample_random(SMALL, substream(9, "data"))
        with pytest.raises(ValueError, match="perf"):
            correlation_report([dag])

    def test_empty_corpus_raises(self):
        with pytest.raises(EmptyCorpus):
            correlation_report([])

    def test_csv_roundtrip(self, tmp_path):
        report = correlation_report(self.corpus_with_path_perf(), num_bins=3)
        path = tmp_path / "corr.csv"
        write_correlation_csv(str(path), report)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("bin,count,perf_min")
        assert len(lines) == 1 + len(report.bins)
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert float(first[2]) == report.bins[0].perf_min


class TestLatentProjection:
    def make_model_and_corpus(self):
        model = VaeModel(SMALL, hidden=12, latent=6, d_op=2, rng=np.random.default_rng(0))
        rng = substream(10, "data")
        corpus = [sample_random(SMALL, rng).with_perf(float(i)) for i in range(12)]
        return model, corpus

    def test_shape_centering_and_order(self):
        model, corpus = self.make_model_and_corpus()
        rows = latent_projection_2d(model, corpus)
        assert rows.shape == (12, 3)
        assert abs(rows[:, 0].mean()) < 1e-9 and abs(rows[:, 1].mean()) < 1e-9
        # first component carries at least as much variance as the second
        assert rows[:, 0].var() >= rows[:, 1].var()
        assert np.array_equal(rows[:, 2], np.arange(12.0))

    def test_deterministic(self):
        model, corpus = self.make_model_and_corpus()
        assert np.array_equal(latent_projection_2d(model, corpus), latent_projection_2d(model, corpus))

    def test_requires_three_dags_and_perf(self):
        model, corpus = self.make_model_and_corpus()
        with pytest.raises(ValueError, match="three"):
            latent_projection_2d(model, corpus[:2])
        stripped = [d.with_perf(None) for d in corpus]
        with pytest.raises(ValueError, match="perf"):
            latent_projection_2d(model, stripped)

    def test_csv_roundtrip(self, tmp_path):
        model, corpus = self.make_model_and_corpus()
        rows = latent_projection_2d(model, corpus)
        path = tmp_path / "proj.csv"
        write_projection_csv(str(path), rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x,y,perf"
        parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        assert np.array_equal(parsed, rows)
