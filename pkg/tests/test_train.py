"""Tests for the ELBO objective, config parsing, and the training loops."""

import math

import numpy as np
import pytest

from dagspace import autodiff as ad
from dagspace.model import InvalidDag, VaeModel
from dagspace.rng import substream
from dagspace.space import ArchitectureDag, SearchSpace, sample_random
from dagspace.train import (
    EmptyDataset,
    TrainConfig,
    _build_model,
    _kl_rows,
    elbo_loss,
    iterated_training,
    kl_diag_gaussian,
    parse_config_file,
    split_dataset,
    train,
    write_history_csv,
)

from oracles import quadrature_kl

SMALL = SearchSpace(num_op_layers=2, operations=("a", "b"))


def small_config(**overrides) -> TrainConfig:
    base = dict(
        epochs_per_iteration=2,
        iterations=1,
        batch_size=8,
        learning_rate=1e-3,
        kl_weight=0.01,
        seed=0,
        hidden=16,
        latent=6,
        d_op=2,
        train_fraction=0.8,
    )
    base.update(overrides)
    return TrainConfig(**base)


def small_corpus(n: int, seed: int = 0) -> list[ArchitectureDag]:
    rng = substream(seed, "data")
    return [sample_random(SMALL, rng) for _ in range(n)]


class TestKl:
    def test_standard_normal_is_exactly_zero(self):
        assert kl_diag_gaussian(np.zeros(5), np.zeros(5)) == 0.0

    def test_hand_value_unit_mean(self):
        # 0.5 * (e^0 + 1 - 1 - 0) = 0.5
        assert kl_diag_gaussian(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5, abs=1e-15)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            mu = rng.normal(size=3) * 2.0
            log_var = rng.normal(size=3)
            closed = kl_diag_gaussian(mu, log_var)
            numeric = sum(quadrature_kl(m, lv) for m, lv in zip(mu, log_var))
            assert abs(closed - numeric) < 1e-6

    def test_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            mu = rng.normal(size=4) * 3.0
            log_var = rng.normal(size=4) * 2.0
            assert kl_diag_gaussian(mu, log_var) >= 0.0

    def test_tensor_rows_match_closed_form(self):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=(4, 5))
        log_var = rng.normal(size=(4, 5))
        rows = _kl_rows(ad.Tensor(mu), ad.Tensor(log_var)).data
        for i in range(4):
            assert rows[i] == pytest.approx(kl_diag_gaussian(mu[i], log_var[i]), abs=1e-12)


class TestElboLoss:
    def test_components_add_up(self):
        model = VaeModel(SMALL, hidden=12, latent=4, d_op=2, rng=np.random.default_rng(0))
        dag = sample_random(SMALL, np.random.default_rng(1))
        total, recon, kl = elbo_loss(model, dag, np.random.default_rng(2), kl_weight=0.3)
        assert total.item() == pytest.approx(recon.item() + 0.3 * kl.item(), rel=1e-12)
        assert kl.item() >= 0.0

    def test_zero_weight_drops_kl(self):
        model = VaeModel(SMALL, hidden=12, latent=4, d_op=2, rng=np.random.default_rng(0))
        dag = sample_random(SMALL, np.random.default_rng(1))
        total, recon, _ = elbo_loss(model, dag, np.random.default_rng(2), kl_weight=0.0)
        assert total.item() == recon.item()

    def test_invalid_dag_rejected(self):
        model = VaeModel(SMALL, hidden=12, latent=4, d_op=2, rng=np.random.default_rng(0))
        orphan = ArchitectureDag(op_of_node=(2, 0, 0, 3), edges=frozenset({(1, 2), (2, 3)}))
        with pytest.raises(InvalidDag):
            elbo_loss(model, orphan, np.random.default_rng(0))


class TestConfigValidation:
    def test_defaults_resolve_iterations_by_encoder(self):
        assert TrainConfig().resolved_iterations() == 4
        assert TrainConfig(encoder="gcn").resolved_iterations() == 1
        assert TrainConfig(iterations=2, encoder="gcn").resolved_iterations() == 2

    @pytest.mark.parametrize(
        "bad",
        [
            dict(epochs_per_iteration=0),
            dict(iterations=0),
            dict(kl_weight=-0.1),
            dict(batch_size=0),
            dict(train_fraction=0.0),
            dict(train_fraction=1.5),
            dict(encoder="rnn"),
            dict(embedding="word2vec"),
        ],
    )
    def test_bad_values_rejected(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestConfigFile:
    def test_roundtrip_all_fields(self, tmp_path):
        path = tmp_path / "full.cfg"
        path.write_text(
            "\n".join(
                [
                    "# full configuration",
                    "epochs_per_iteration = 7",
                    "iterations = 2",
                    "batch_size = 4",
                    "learning_rate = 0.002",
                    "kl_weight = 0.5  # trailing comment",
                    "seed = 9",
                    "encoder = gcn",
                    "embedding = onehot",
                    "hidden = 32",
                    "latent = 8",
                    "d_op = 5",
                    "gcn_rounds = 2",
                    "train_fraction = 0.75",
                    "carry_all_weights = true",
                    "score_input_edges = false",
                    "",
                ]
            )
        )
        cfg = parse_config_file(str(path))
        assert cfg == TrainConfig(
            epochs_per_iteration=7,
            iterations=2,
            batch_size=4,
            learning_rate=0.002,
            kl_weight=0.5,
            seed=9,
            encoder="gcn",
            embedding="onehot",
            hidden=32,
            latent=8,
            d_op=5,
            gcn_rounds=2,
            train_fraction=0.75,
            carry_all_weights=True,
            score_input_edges=False,
        )

    def test_auto_iterations_maps_to_none(self, tmp_path):
        path = tmp_path / "auto.cfg"
        path.write_text("iterations = auto\n")
        assert parse_config_file(str(path)).iterations is None

    def test_unknown_field_named_with_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("momentum = 0.9\n")
        with pytest.raises(ValueError, match=r"bad\.cfg:1.*'momentum'"):
            parse_config_file(str(path))

    def test_malformed_value_names_field(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("hidden = large\n")
        with pytest.raises(ValueError, match="'hidden'"):
            parse_config_file(str(path))

    def test_missing_equals_sign(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("hidden 64\n")
        with pytest.raises(ValueError, match="expected 'key = value'"):
            parse_config_file(str(path))

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("# nothing but comments\n\n")
        assert parse_config_file(str(path)) == TrainConfig()


class TestSplit:
    def test_partition_and_determinism(self):
        corpus = small_corpus(25)
        a_train, a_test = split_dataset(corpus, 0.8, seed=4)
        b_train, b_test = split_dataset(corpus, 0.8, seed=4)
        assert a_train == b_train and a_test == b_test
        assert len(a_train) == 20 and len(a_test) == 5
        assert sorted(map(id, a_train + a_test)) == sorted(map(id, corpus))

    def test_different_seed_shuffles_differently(self):
        corpus = small_corpus(40)
        a_train, _ = split_dataset(corpus, 0.5, seed=0)
        b_train, _ = split_dataset(corpus, 0.5, seed=1)
        assert a_train != b_train

    def test_full_fraction_keeps_everything(self):
        corpus = small_corpus(10)
        tr, te = split_dataset(corpus, 1.0, seed=0)
        assert len(tr) == 10 and te == []


class TestTrainLoop:
    def test_history_shape_and_finiteness(self):
        model, history = train(small_config(), small_corpus(20), SMALL)
        assert [row.epoch for row in history] == [1, 2]
        assert all(math.isfinite(row.recon_loss) and math.isfinite(row.kl) for row in history)
        assert model.params.all_finite()

    def test_loss_decreases_on_tiny_corpus(self):
        cfg = small_config(epochs_per_iteration=30, batch_size=4, learning_rate=5e-3)
        _, history = train(cfg, small_corpus(8), SMALL)
        assert history[-1].recon_loss < history[0].recon_loss

    def test_bitwise_deterministic(self):
        cfg = small_config()
        corpus = small_corpus(20)
        model_a, hist_a = train(cfg, corpus, SMALL)
        model_b, hist_b = train(cfg, corpus, SMALL)
        assert hist_a == hist_b
        for name, tensor in model_a.params.items():
            assert np.array_equal(tensor.data, model_b.params[name].data), name

    def test_empty_dataset_raises(self):
        with pytest.raises(EmptyDataset):
            train(small_config(), [], SMALL)
        with pytest.raises(EmptyDataset):
            train(small_config(train_fraction=0.1), small_corpus(2), SMALL)

    def test_learnable_table_moves(self):
        cfg = small_config(epochs_per_iteration=1)
        fresh = _build_model(cfg, SMALL, substream(cfg.seed, "init"))
        trained, _ = train(cfg, small_corpus(20), SMALL)
        delta = np.linalg.norm(trained.table.weights.data - fresh.table.weights.data)
        assert delta > 0.0

    def test_frozen_onehot_table_constant(self):
        cfg = small_config(embedding="onehot", epochs_per_iteration=1)
        trained, _ = train(cfg, small_corpus(20), SMALL)
        assert np.array_equal(trained.table.weights.data, np.eye(len(SMALL.operations) + 2))


class TestIteratedTraining:
    def test_single_iteration_matches_plain_train(self):
        cfg = small_config(iterations=1)
        corpus = small_corpus(20)
        model_a, hist_a = train(cfg, corpus, SMALL)
        model_b, hists_b, snaps = iterated_training(cfg, corpus, SMALL)
        assert hists_b == [hist_a]
        assert len(snaps) == 1
        for name, tensor in model_a.params.items():
            assert np.array_equal(tensor.data, model_b.params[name].data), name

    def test_snapshot_is_carry_over_table(self):
        corpus = small_corpus(20)
        _, _, snaps_one = iterated_training(small_config(iterations=1), corpus, SMALL)
        model_two, _, snaps_two = iterated_training(small_config(iterations=2), corpus, SMALL)
        # iteration 2 warm-starts from exactly the table iteration 1 ended with
        assert np.array_equal(snaps_two[0], snaps_one[0])
        assert np.array_equal(snaps_two[1], model_two.table.weights.data)
        assert not np.array_equal(snaps_two[0], snaps_two[1])

    def test_epoch_numbering_is_global(self):
        _, hists, _ = iterated_training(small_config(iterations=3), small_corpus(20), SMALL)
        epochs = [row.epoch for hist in hists for row in hist]
        assert epochs == list(range(1, 7))

    def test_non_embedding_weights_restart(self):
        cfg = small_config(iterations=2, epochs_per_iteration=1)
        corpus = small_corpus(20)
        restarted, _, _ = iterated_training(cfg, corpus, SMALL)
        carried, _, _ = iterated_training(
            small_config(iterations=2, epochs_per_iteration=1, carry_all_weights=True),
            corpus,
            SMALL,
        )
        same = all(
            np.array_equal(tensor.data, carried.params[name].data)
            for name, tensor in restarted.params.items()
        )
        assert not same

    def test_frozen_onehot_snapshots_identical(self):
        cfg = small_config(iterations=2, embedding="onehot")
        _, _, snaps = iterated_training(cfg, small_corpus(20), SMALL)
        eye = np.eye(len(SMALL.operations) + 2)
        assert np.array_equal(snaps[0], eye) and np.array_equal(snaps[1], eye)


class TestHistoryCsv:
    def test_roundtrip_exact_floats(self, tmp_path):
        _, hists, _ = iterated_training(small_config(iterations=2), small_corpus(20), SMALL)
        path = tmp_path / "history.csv"
        write_history_csv(str(path), hists)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,recon_loss,kl"
        flat = [row for hist in hists for row in hist]
        assert len(lines) == 1 + len(flat)
        for line, row in zip(lines[1:], flat):
            epoch, recon, kl = line.split(",")
            assert int(epoch) == row.epoch
            assert float(recon) == row.recon_loss
            assert float(kl) == row.kl
