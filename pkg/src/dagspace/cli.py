"""Command-line interface.

Heavy imports are deferred until after argument parsing so that --threads can
pin the BLAS thread pools through environment variables before numpy loads.
Every subcommand writes its outputs deterministically for a fixed seed and
thread count, and never mutates its input files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

CONFIG_DIR_VAR = "DAGSPACE_CONFIG_DIR"


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise ValueError("--threads must be a positive integer")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


def _resolve_config_path(path: str) -> str:
    if os.path.exists(path):
        return path
    base = os.environ.get(CONFIG_DIR_VAR)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    raise FileNotFoundError(f"config file not found: {path}")


def _add_space_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--layers", type=int, default=6, help="number of operation layers")
    sp.add_argument("--ops", type=str, default=None, help="comma-separated operation names")


def _add_seed_arg(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--seed", type=int, default=0, help="root seed for all randomness")


def _make_space(args: argparse.Namespace):
    from .space import DEFAULT_OPERATIONS, SearchSpace

    if args.ops:
        ops = tuple(name.strip() for name in args.ops.split(",") if name.strip())
        if not ops:
            raise ValueError("--ops must name at least one operation")
    else:
        ops = DEFAULT_OPERATIONS
    return SearchSpace(num_op_layers=args.layers, operations=ops)


def _check_corpus_space(dags, space) -> None:
    if dags and dags[0].num_nodes != space.num_nodes:
        raise ValueError(
            f"corpus DAGs have {dags[0].num_nodes} nodes but the requested "
            f"space has {space.num_nodes}; pass matching --layers"
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args: argparse.Namespace) -> int:
    from .rng import substream
    from .search import OracleConfig, attach_synthetic_perf
    from .space import sample_random, save_corpus

    space = _make_space(args)
    rng = substream(args.seed, "data")
    dags = [sample_random(space, rng) for _ in range(args.num)]
    oracle = OracleConfig().with_stats_from(dags)
    scored = attach_synthetic_perf(dags, oracle, space)
    save_corpus(args.out, scored)
    print(f"wrote {len(scored)} scored DAGs to {args.out}")
    return 0


def _train_config(args: argparse.Namespace):
    import dataclasses

    from .train import TrainConfig, parse_config_file

    if args.config:
        config = parse_config_file(_resolve_config_path(args.config))
    else:
        config = TrainConfig()
    overrides: dict = {}
    for flag, name in (
        ("epochs", "epochs_per_iteration"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("kl_weight", "kl_weight"),
        ("encoder", "encoder"),
        ("embedding", "embedding"),
        ("hidden", "hidden"),
        ("latent", "latent"),
        ("d_op", "d_op"),
        ("gcn_rounds", "gcn_rounds"),
        ("train_fraction", "train_fraction"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[name] = value
    if args.iterations is not None:
        overrides["iterations"] = None if args.iterations == "auto" else int(args.iterations)
    return dataclasses.replace(config, **overrides)


def cmd_train(args: argparse.Namespace) -> int:
    from .space import load_corpus
    from .train import iterated_training, split_dataset, write_history_csv

    space = _make_space(args)
    corpus = load_corpus(args.data)
    _check_corpus_space(corpus, space)
    config = _train_config(args)
    train_dags, _ = split_dataset(corpus, config.train_fraction, config.seed)
    model, histories, _ = iterated_training(config, train_dags, space)
    model.save(args.out)
    if args.history:
        write_history_csv(args.history, histories)
    last = histories[-1][-1]
    print(
        f"trained {config.resolved_iterations()} iteration(s) on {len(train_dags)} DAGs; "
        f"final recon={last.recon_loss:.6f} kl={last.kl:.6f}; model saved to {args.out}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .metrics import prior_validity, reconstruction_accuracy, sample_prior_decodes, uniqueness
    from .model import VaeModel, encode_corpus
    from .rng import substream
    from .search import predictive_quality
    from .space import load_corpus, validate
    from .train import split_dataset

    model = VaeModel.load(args.model)
    corpus = load_corpus(args.data)
    _check_corpus_space(corpus, model.space)
    _, test_dags = split_dataset(corpus, args.train_fraction, args.seed)
    if not test_dags:
        raise ValueError("the held-out split is empty; lower --train-fraction")
    rng = substream(args.seed, "eval")
    results: dict[str, float] = {}
    results["reconstruction_accuracy"] = reconstruction_accuracy(
        model, test_dags, args.samples_z, args.decodes_per_z, rng
    )
    decodes = sample_prior_decodes(model, args.prior_points, args.decodes_per_point, rng)
    valid = [d for d in decodes if validate(d).is_valid]
    results["prior_validity"] = 100.0 * len(valid) / len(decodes)
    results["uniqueness"] = uniqueness(valid)
    if all(d.perf is not None for d in corpus):
        mu, _ = encode_corpus(model, corpus)
        perf = [d.perf for d in corpus]
        quality = predictive_quality(mu, perf, n_repeats=args.repeats, seed=args.seed)
        results["predictive_rmse_mean"] = quality.rmse_mean
        results["predictive_rmse_std"] = quality.rmse_std
        results["predictive_pearson_mean"] = quality.pearson_mean
        results["predictive_pearson_std"] = quality.pearson_std
    for key in sorted(results):
        print(f"{key} = {results[key]:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(results, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    from .model import VaeModel
    from .rng import substream
    from .search import (
        OracleConfig,
        bo_loop,
        seed_evaluations,
        write_bo_history_csv,
        write_top_k_jsonl,
    )
    from .space import load_corpus

    model = VaeModel.load(args.model)
    corpus = load_corpus(args.data)
    _check_corpus_space(corpus, model.space)
    oracle = OracleConfig().with_stats_from(corpus)
    rng = substream(args.seed, "bo")
    latents, dags, scores = seed_evaluations(model, model.space, oracle, args.seed_evals, rng)
    result = bo_loop(
        model,
        model.space,
        oracle,
        latents,
        dags,
        scores,
        iterations=args.iterations,
        batch_size=args.batch_size,
        rng=rng,
        log=print,
    )
    if args.history:
        write_bo_history_csv(args.history, result.history)
    if args.top:
        write_top_k_jsonl(args.top, result.top_k(args.top_k))
    print(f"best score {result.best_score:.6f} after {result.history[-1].evaluations} evaluations")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    from .metrics import correlation_report, write_correlation_csv
    from .space import load_corpus

    corpus = load_corpus(args.data)
    report = correlation_report(corpus, num_bins=args.bins)
    if args.out:
        write_correlation_csv(args.out, report)
    print(f"pearson(perf, path_length) = {report.pearson_path:.6f}")
    print(f"pearson(perf, clustering) = {report.pearson_clustering:.6f}")
    if report.note:
        print(report.note)
    return 0


def cmd_project(args: argparse.Namespace) -> int:
    from .metrics import latent_projection_2d, write_projection_csv
    from .model import VaeModel
    from .space import load_corpus

    model = VaeModel.load(args.model)
    corpus = load_corpus(args.data)
    _check_corpus_space(corpus, model.space)
    rows = latent_projection_2d(model, corpus)
    write_projection_csv(args.out, rows)
    print(f"wrote {rows.shape[0]} projected points to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dagspace",
        description="Variational embedding and latent-space search over architecture DAGs.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="pin BLAS thread pools (set before numerical libraries load)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="sample a corpus and score it with the synthetic oracle")
    _add_space_args(sp)
    _add_seed_arg(sp)
    sp.add_argument("--num", type=int, default=2000, help="number of DAGs to sample")
    sp.add_argument("--out", required=True, help="output JSONL path")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="fit the variational model on a corpus")
    _add_space_args(sp)
    sp.add_argument("--data", required=True, help="corpus JSONL path")
    sp.add_argument("--out", required=True, help="model checkpoint path")
    sp.add_argument("--config", default=None, help="training config file")
    sp.add_argument("--history", default=None, help="per-epoch loss CSV path")
    sp.add_argument("--epochs", type=int, default=None, help="epochs per iteration")
    sp.add_argument("--iterations", default=None, help="pre-training iterations, or 'auto'")
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    sp.add_argument("--kl-weight", dest="kl_weight", type=float, default=None)
    sp.add_argument("--encoder", choices=("async", "gcn"), default=None)
    sp.add_argument("--embedding", choices=("learnable", "onehot"), default=None)
    sp.add_argument("--hidden", type=int, default=None)
    sp.add_argument("--latent", type=int, default=None)
    sp.add_argument("--d-op", dest="d_op", type=int, default=None)
    sp.add_argument("--gcn-rounds", dest="gcn_rounds", type=int, default=None)
    sp.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None, help="root seed for all randomness")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="generative and predictive quality of a trained model")
    _add_seed_arg(sp)
    sp.add_argument("--model", required=True, help="model checkpoint path")
    sp.add_argument("--data", required=True, help="corpus JSONL path")
    sp.add_argument("--out", default=None, help="metrics JSON path")
    sp.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.9)
    sp.add_argument("--samples-z", dest="samples_z", type=int, default=10)
    sp.add_argument("--decodes-per-z", dest="decodes_per_z", type=int, default=10)
    sp.add_argument("--prior-points", dest="prior_points", type=int, default=1000)
    sp.add_argument("--decodes-per-point", dest="decodes_per_point", type=int, default=10)
    sp.add_argument("--repeats", type=int, default=10, help="held-out predictive splits")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("search", help="latent-space optimization against the synthetic oracle")
    _add_seed_arg(sp)
    sp.add_argument("--model", required=True, help="model checkpoint path")
    sp.add_argument("--data", required=True, help="corpus JSONL for oracle statistics")
    sp.add_argument("--iterations", type=int, default=10)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=10)
    sp.add_argument("--seed-evals", dest="seed_evals", type=int, default=50)
    sp.add_argument("--history", default=None, help="optimization history CSV path")
    sp.add_argument("--top", default=None, help="best-architectures JSONL path")
    sp.add_argument("--top-k", dest="top_k", type=int, default=5)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("analyze", help="structure-performance correlation report")
    sp.add_argument("--data", required=True, help="scored corpus JSONL path")
    sp.add_argument("--out", default=None, help="per-bin report CSV path")
    sp.add_argument("--bins", type=int, default=6)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("project", help="2-D latent projection of a scored corpus")
    sp.add_argument("--model", required=True, help="model checkpoint path")
    sp.add_argument("--data", required=True, help="scored corpus JSONL path")
    sp.add_argument("--out", required=True, help="projection CSV path")
    sp.set_defaults(func=cmd_project)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
