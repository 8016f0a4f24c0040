"""``mhmm`` command line: generate | train | predict | evaluate | bench.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
Tables and data go to stdout, messages to stderr.  Settings come from flags,
then an optional ``--config`` JSON file (keys are the long flag names with
dashes replaced by underscores), then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cf, corpus as corpus_mod, hmm
from .evaluate import BenchError, bench_all, load_targets, map_at_k
from .predict import (CF_VARIANTS, MODELS, MixtureConfigError, PredictConfig, Predictor,
                      read_predictions, train_hmm, write_predictions)

_log = logging.getLogger("mhmm")

EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file of defaults for this command")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_threads(p):
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="worker threads; results do not depend on it")


def _add_hmm_flags(p):
    p.add_argument("--states", type=_positive_int, default=hmm.DEFAULT_STATES)
    p.add_argument("--max-iters", type=_positive_int, default=hmm.DEFAULT_MAX_ITERS)
    p.add_argument("--tol", type=_positive_float, default=hmm.DEFAULT_TOL)
    p.add_argument("--smoothing", type=_nonneg_float, default=hmm.DEFAULT_SMOOTHING)


def _add_predict_flags(p):
    _add_hmm_flags(p)
    p.add_argument("--n", type=_positive_int, default=10, help="candidates per user")
    p.add_argument("--n1", type=int, default=7, help="HMM slots in the mixture")
    p.add_argument("--n2", type=int, default=3, help="CF slots in the mixture")
    p.add_argument("--k-user", type=_positive_int, default=cf.DEFAULT_K)
    p.add_argument("--k-item", type=_positive_int, default=cf.DEFAULT_K)
    p.add_argument("--cf-variant", choices=CF_VARIANTS, default="pseudo",
                   help="CF ranker used inside the mixture")
    p.add_argument("--blend", type=_nonneg_float, default=0.0,
                   help="experimental: add blend*frequency/total to HMM scores")


def build_parser():
    parser = argparse.ArgumentParser(prog="mhmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a corpus from a random planted HMM")
    _add_common(p)
    p.add_argument("--users", type=_positive_int, required=True)
    p.add_argument("--length", type=_positive_int, required=True)
    p.add_argument("--artists", type=_positive_int, required=True)
    p.add_argument("--states", type=_positive_int, required=True)
    p.add_argument("-o", "--output", type=Path, required=True, help="corpus CSV")
    p.add_argument("--model-out", type=Path, help="planted model (default: <output>.model.json)")

    p = sub.add_parser("train", help="fit an HMM or precompute item similarities")
    _add_common(p)
    _add_threads(p)
    p.add_argument("--model", choices=("hmm", "cf-item"), default="hmm")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--binary", action="store_true", help="cf-item: similarities of 0/1 plays")
    _add_hmm_flags(p)

    p = sub.add_parser("predict", help="write top-n next-artist predictions")
    _add_common(p)
    _add_threads(p)
    p.add_argument("--model", choices=MODELS, default="mhmm")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--hmm", type=Path, help="trained model file (default: train now)")
    p.add_argument("--item-sims", type=Path, help="item-similarity cache from 'train --model cf-item'")
    p.add_argument("--holdout", action="store_true",
                   help="drop each sequence's last play and predict it")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_predict_flags(p)

    p = sub.add_parser("evaluate", help="MAP@K of a predictions file")
    _add_common(p)
    p.add_argument("--predictions", type=Path, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--targets", type=Path, help="one artist code per line")
    group.add_argument("--corpus", type=Path, help="use each sequence's last play as target")
    p.add_argument("--k", type=_positive_int, default=10)
    p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("bench", help="compare all six models")
    _add_common(p)
    _add_threads(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--targets", type=Path,
                   help="true next artists (one code per line); default: leave-last-out")
    p.add_argument("--models", nargs="+", choices=MODELS, default=list(MODELS))
    p.add_argument("--k", type=_positive_int, default=10)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("-o", "--output", type=Path, help="write the JSON report here")
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock seconds in the JSON report")
    _add_predict_flags(p)
    return parser, sub.choices


def parse_args(argv=None):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            defaults = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(defaults, dict):
            parser.error(f"config {args.config} must hold a JSON object")
        sp = subparsers[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _predict_config(args):
    try:
        return PredictConfig(
            n=args.n, n1=args.n1, n2=args.n2, k_user=args.k_user, k_item=args.k_item,
            cf_variant=args.cf_variant, n_states=args.states, max_iters=args.max_iters,
            tol=args.tol, smoothing=args.smoothing, seed=args.seed, blend=args.blend,
        )
    except (MixtureConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_corpus(path):
    try:
        return corpus_mod.load_csv(path)
    except FileNotFoundError:
        raise UsageError(f"corpus not found: {path}") from None


def cmd_generate(args):
    corpus, model = corpus_mod.generate_synthetic(
        args.users, args.length, args.artists, args.states, args.seed)
    model_out = args.model_out or args.output.with_name(args.output.stem + ".model.json")
    corpus_mod.write_csv(corpus, args.output)
    meta = {"users": args.users, "length": args.length, "artists": args.artists,
            "states": args.states, "seed": args.seed}
    hmm.save_model(model, model_out, meta={"planted": meta})
    print(args.output)
    print(model_out)
    return 0


def cmd_train(args):
    corpus = _load_corpus(args.corpus)
    if args.model == "cf-item":
        matrix = corpus_mod.to_rating_matrix(corpus)
        if args.binary:
            matrix = matrix.binarized()
        sims = cf.similarity_matrix(matrix.values.T)
        cf.save_similarity_cache(args.output, sims, matrix.content_hash())
        print(args.output)
        return 0
    config = PredictConfig(n_states=args.states, max_iters=args.max_iters, tol=args.tol,
                           smoothing=args.smoothing, seed=args.seed)
    model, report = train_hmm(corpus, config, threads=args.threads)
    meta = {
        "config": {"states": args.states, "max_iters": args.max_iters, "tol": args.tol,
                   "smoothing": args.smoothing, "seed": args.seed, "corpus": str(args.corpus)},
        "iterations_run": report.iterations_run,
        "converged": report.converged,
        "log_likelihood_trace": report.log_likelihood_trace,
    }
    hmm.save_model(model, args.output, meta=meta)
    for i, ll in enumerate(report.log_likelihood_trace):
        print(f"iter {i:4d}  log_likelihood {ll:.6f}")
    print(f"iterations {report.iterations_run}")
    print(f"log_likelihood {report.log_likelihood_trace[-1]:.6f}")
    print(f"converged {str(report.converged).lower()}")
    return 0


def cmd_predict(args):
    corpus = _load_corpus(args.corpus)
    config = _predict_config(args)
    if args.holdout:
        corpus = corpus_mod.split_holdout(corpus).prefixes
    model = None
    if args.hmm is not None:
        model = hmm.load_model(args.hmm)
        if model.vocab_size != corpus.vocab_size:
            raise UsageError(
                f"vocabulary mismatch: model has {model.vocab_size} symbols, "
                f"corpus has {corpus.vocab_size} artists"
            )
    sims = None
    if args.item_sims is not None:
        sims = cf.load_similarity_cache(args.item_sims, corpus_mod.to_rating_matrix(corpus).content_hash())
        if sims is None:
            _log.warning("item-similarity cache %s does not match the corpus; recomputing", args.item_sims)
    _log.info("predict config: %s", json.dumps(config.to_dict(), sort_keys=True))
    predictor = Predictor(corpus, config, threads=args.threads, hmm_model=model, item_sims=sims)
    rankings = predictor.rankings(args.model)
    write_predictions(args.output, rankings, corpus)
    print(args.output)
    return 0


def cmd_evaluate(args):
    predictions = read_predictions(args.predictions)
    if args.targets is not None:
        targets = [int(t) for t in args.targets.read_text(encoding="utf-8").split()]
    else:
        corpus = _load_corpus(args.corpus)
        targets = corpus.to_external(corpus.sequences[:, -1]).tolist()
    if len(targets) != len(predictions):
        raise UsageError(f"{len(targets)} targets but {len(predictions)} prediction rows")
    for row in predictions:
        if len(set(row)) != len(row):
            raise UsageError("prediction row contains duplicate artists")
    score = map_at_k(targets, predictions, args.k)
    if args.format == "json":
        print(json.dumps({"K": args.k, "N_users": len(targets), "map_at_k": score,
                          "predictions": str(args.predictions)}, indent=2, sort_keys=True))
    else:
        print(f"MAP@{args.k} {score:.5f}")
    return 0


def cmd_bench(args):
    corpus = _load_corpus(args.corpus)
    config = _predict_config(args)
    targets = None
    if args.targets is not None:
        targets = load_targets(args.targets, corpus)
    report = bench_all(corpus, config, k=args.k, models=args.models, targets=targets,
                       threads=args.threads)
    report.config["corpus"] = str(args.corpus)
    report.config["targets"] = None if args.targets is None else str(args.targets)
    text = report.to_json(timings=args.timings)
    if args.output is not None:
        args.output.write_text(text, encoding="utf-8")
    sys.stdout.write(text if args.format == "json" else report.to_text())
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except hmm.NumericalError as exc:
        print(f"mhmm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BenchError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, hmm.NumericalError) else EXIT_USAGE
        print(f"mhmm {args.command}: {exc}", file=sys.stderr)
        return code
    except (UsageError, corpus_mod.CorpusError, hmm.ModelFileError, cf.SimilarityCacheError,
            ValueError, OSError) as exc:
        print(f"mhmm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
