"""Command-line entry point: ingest, preprocess, train, predict, eval, sweep."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .classifier import NBModel, predict_proba_matrix, rank_developers, joint_log_scores, train_nb
from .corpus import FORMATS, filter_developers, filter_lifecycle, parse_corpus, write_corpus
from .evaluation import (
    DEFAULT_LAMBDA_GRID,
    METHODS,
    run_experiment,
    run_sweep,
    select_lambda,
)
from .exceptions import TriageError
from .preprocess import (
    DEFAULT_MIN_REPORT_FREQ,
    DEFAULT_MIN_TOKEN_LEN,
    DEFAULT_STOPLIST,
    ProcessedDataset,
    TokenizerConfig,
    bags_to_matrix,
    load_stoplist,
    preprocess_corpus,
)
from .semisupervised import EMConfig, train_semisupervised

logger = logging.getLogger("bugtriage")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
CONFIG_SECTION = "bugtriage"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _lambda_value(text: str):
    if text == "auto":
        return "auto"
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("lambda must be in [0, 1] or 'auto'")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("fraction must be in (0, 1)")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
        count = int(round((stop - start) / step, 9)) + 1
        values = [round(start + i * step, 10) for i in range(count)]
    else:
        values = [float(x) for x in text.split(",") if x.strip()]
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("grid values must lie in [0, 1]")
    return values


def _int_list(text: str) -> list[int]:
    values = [int(x) for x in text.split(",") if x.strip()]
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("expected comma-separated positive integers")
    return values


def _methods(text: str) -> list[str]:
    values = [x.strip() for x in text.split(",") if x.strip()]
    bad = [v for v in values if v not in METHODS]
    if not values or bad:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return values


def _add_tokenizer_args(p):
    p.add_argument("--stoplist", type=Path, help="stoplist file (default: bundled English list)")
    p.add_argument("--min-token-len", type=_positive_int, default=DEFAULT_MIN_TOKEN_LEN)
    p.add_argument("--min-report-freq", type=_positive_int, default=DEFAULT_MIN_REPORT_FREQ)


def _add_em_args(p, list_size_default=1):
    p.add_argument("--lambda", dest="lambda_", type=_lambda_value, default="auto",
                   help="weight factor for unlabeled reports, or 'auto' for cross-validation")
    p.add_argument("--list-size", type=_positive_int, default=list_size_default,
                   help="weighted recommendation list size")
    p.add_argument("--max-iterations", type=_positive_int, default=50)
    p.add_argument("--min-improvement", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=1.0, help="additive smoothing")
    p.add_argument("--lambda-grid", type=parse_grid, default=list(DEFAULT_LAMBDA_GRID))
    p.add_argument("--folds", type=_positive_int, default=5)


def _add_data_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus", type=Path, help="ingested corpus (jsonl)")
    src.add_argument("--dataset", type=Path, help="preprocessed dataset (json)")
    _add_tokenizer_args(p)
    p.add_argument("--labeled-frac", type=_fraction, default=0.05)
    p.add_argument("--test-frac", type=_fraction, default=0.2)
    p.add_argument("--split", choices=("chronological", "random"), default="chronological")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bugtriage", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help=f"INI file with a [{CONFIG_SECTION}] section")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=_positive_int, default=1)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--timing", action="store_true",
                        help="include wall-clock times in written traces and reports")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("ingest", help="parse and filter a raw corpus")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--format", choices=FORMATS, default="jsonl")
    p.add_argument("--min-fixed", type=_positive_int, default=1,
                   help="drop developers with fewer fixed reports")
    p.add_argument("--keep-unresolved", action="store_true", help="skip the lifecycle filter")

    p = sub.add_parser("preprocess", help="tokenize and vectorize an ingested corpus")
    p.add_argument("corpus", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _add_tokenizer_args(p)

    p = sub.add_parser("train", help="train a model on a preprocessed dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--method", choices=METHODS, default="nb")
    p.add_argument("--trace", type=Path, help="write the EM trace here (jsonl)")
    _add_em_args(p)

    p = sub.add_parser("predict", help="recommend developers for new reports")
    p.add_argument("model", type=Path)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="jsonl reports")
    src.add_argument("--text", help="a single report text")
    p.add_argument("--top", type=_positive_int, default=5)

    for name, help_ in (("eval", "accuracy@n table for several methods"),
                        ("sweep", "accuracy@n against a grid of weight factors")):
        p = sub.add_parser(name, help=help_)
        _add_data_args(p)
        p.add_argument("--out-json", type=Path)
        p.add_argument("--out-table", type=Path)
        if name == "eval":
            p.add_argument("--methods", type=_methods, default=list(METHODS))
            p.add_argument("--max-list", type=_positive_int, default=5)
            _add_em_args(p, list_size_default=None)
        else:
            p.add_argument("--methods", type=_methods, default=["nbem", "nbem-wrl"])
            p.add_argument("--list-sizes", type=_int_list, default=[1, 3, 5])
            _add_em_args(p, list_size_default=None)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--developers", type=_positive_int, default=5)
    p.add_argument("--reports-per-developer", type=_positive_int, default=40)
    p.add_argument("--vocab-size", type=_positive_int, default=200)
    p.add_argument("--unlabeled", type=int, default=0, help="extra reports without a developer")
    return parser


def _apply_config(parser, argv, args):
    """Re-parse with config-file values as defaults so flags still win."""
    cp = configparser.ConfigParser()
    if not cp.read(args.config, encoding="utf-8"):
        raise UsageError(f"cannot read config file {args.config}")
    if not cp.has_section(CONFIG_SECTION):
        raise UsageError(f"config file lacks a [{CONFIG_SECTION}] section")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for p in (parser, subparser) for a in p._actions}
    aliases = {"lambda": "lambda_"}
    for key, raw in cp.items(CONFIG_SECTION):
        dest = key.replace("-", "_")
        dest = aliases.get(dest, dest)
        action = actions.get(dest)
        if action is None or dest in ("config", "help", "command"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            value = cp.getboolean(CONFIG_SECTION, key)
        elif isinstance(action, argparse._CountAction):
            value = int(raw)
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        owner = parser if dest in {a.dest for a in parser._actions} else subparser
        owner.set_defaults(**{dest: value})
    return parser.parse_args(argv)


def _tokenizer(args) -> TokenizerConfig:
    stop = load_stoplist(args.stoplist) if args.stoplist else DEFAULT_STOPLIST
    return TokenizerConfig(stop, args.min_token_len)


def _em_config(args, list_size) -> EMConfig:
    return EMConfig(
        lambda_=0.0,
        list_size=list_size,
        max_iterations=args.max_iterations,
        min_improvement=args.min_improvement,
        alpha=args.alpha,
    )


def cmd_ingest(args):
    corpus = parse_corpus(args.input, args.format)
    total = len(corpus)
    kept = corpus if args.keep_unresolved else filter_lifecycle(corpus)
    after_lifecycle = len(kept)
    kept = filter_developers(kept, args.min_fixed)
    write_corpus(kept, args.output)
    developers = len({r.developer for r in kept if r.developer is not None})
    print(f"ingest: {total} read, {total - after_lifecycle} removed by lifecycle filter, "
          f"{after_lifecycle - len(kept)} removed by developer filter (min_fixed={args.min_fixed}), "
          f"{len(kept)} retained with {developers} developers", file=sys.stderr)


def _load_corpus_dataset(path, args, min_report_freq) -> ProcessedDataset:
    corpus = parse_corpus(path, "jsonl")
    data = preprocess_corpus(corpus, _tokenizer(args), min_report_freq)
    if data.excluded_ids:
        print(f"note: {len(data.excluded_ids)} report(s) with no usable words excluded",
              file=sys.stderr)
    return data


def cmd_preprocess(args):
    data = _load_corpus_dataset(args.corpus, args, args.min_report_freq)
    data.save(args.output)
    print(f"preprocess: {len(data)} reports, {data.n_words} words, "
          f"{data.n_developers} developers, {int(data.is_labeled.sum())} labeled",
          file=sys.stderr)


def _train(data: ProcessedDataset, args):
    labeled = data.subset(np.flatnonzero(data.is_labeled))
    unlabeled = data.subset(np.flatnonzero(~data.is_labeled))
    if args.method == "nb":
        return train_nb(labeled, args.alpha), None, None
    list_size = args.list_size if args.method == "nbem-wrl" else 1
    config = _em_config(args, list_size)
    lam = args.lambda_
    if lam == "auto":
        lam = select_lambda(labeled, unlabeled, args.lambda_grid, args.folds, config,
                            seed=args.seed, n_jobs=args.threads)
        print(f"train: selected lambda={lam:g} by {args.folds}-fold cross-validation",
              file=sys.stderr)
    model, trace = train_semisupervised(labeled, unlabeled, config.replace(lambda_=lam))
    return model, trace, lam


def cmd_train(args):
    data = ProcessedDataset.load(args.dataset)
    model, trace, lam = _train(data, args)
    model.save(args.output)
    if trace is not None:
        print(f"train: {len(trace) - 1} EM iteration(s), best at iteration "
              f"{trace.best_iteration} ({trace.monitor})", file=sys.stderr)
        if args.trace:
            trace.write(args.trace, timing=args.timing, **{"lambda": lam})
    elif args.trace:
        Path(args.trace).write_text("", encoding="utf-8")


def cmd_predict(args):
    model = NBModel.load(args.model)
    if model.vocabulary is None or model.tokenizer is None:
        raise TriageError("model file has no vocabulary/tokenizer; cannot read raw text")
    if args.text is not None:
        ids, texts = [None], [args.text]
    else:
        corpus = parse_corpus(args.input, "jsonl")
        ids, texts = [r.id for r in corpus], [r.text for r in corpus]
    X = bags_to_matrix([model.tokenizer(t) for t in texts], model.vocabulary)
    scores = joint_log_scores(model, X)
    probs = predict_proba_matrix(model, X)
    ranking = rank_developers(scores)[:, : min(args.top, model.developer_count)]
    out = sys.stdout
    for row, report_id in enumerate(ids):
        for rank, j in enumerate(ranking[row], start=1):
            prefix = "" if report_id is None else f"{report_id}\t"
            out.write(f"{prefix}{rank}\t{model.developers[j]}\t{probs[row, j]:.17g}\n")


def _evaluation_data(args):
    if args.dataset is None and args.corpus is None:
        raise UsageError("one of --corpus or --dataset is required")
    if args.dataset is not None:
        data, min_freq = ProcessedDataset.load(args.dataset), None
    else:
        # keep every word here; pruning happens on training rows after the split
        data, min_freq = _load_corpus_dataset(args.corpus, args, 1), args.min_report_freq
    unlabeled = int((~data.is_labeled).sum())
    if unlabeled:
        print(f"note: {unlabeled} report(s) without a developer dropped from evaluation",
              file=sys.stderr)
        data = data.subset(np.flatnonzero(data.is_labeled))
    return data, min_freq


def _write_outputs(args, payload: dict, table: str):
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    if args.out_table:
        Path(args.out_table).write_text(table, encoding="utf-8")
    if not args.out_table:
        sys.stdout.write(table)


def cmd_eval(args):
    data, min_freq = _evaluation_data(args)
    list_size = args.list_size or args.max_list
    report = run_experiment(
        data, args.methods, args.max_list, _em_config(args, list_size), args.lambda_,
        args.lambda_grid, args.folds, args.labeled_frac, args.test_frac, args.split,
        args.seed, args.threads, min_freq,
    )
    _write_outputs(args, report.to_dict(timing=args.timing), report.to_table())


def cmd_sweep(args):
    data, min_freq = _evaluation_data(args)
    list_size = args.list_size or max(args.list_sizes)
    report = run_sweep(
        data, args.methods, args.lambda_grid, args.list_sizes, _em_config(args, list_size),
        args.labeled_frac, args.test_frac, args.split, args.seed, args.threads, min_freq,
    )
    _write_outputs(args, report.to_dict(), report.to_table())


def cmd_synth(args):
    from .synthetic import make_bug_corpus

    corpus = make_bug_corpus(args.developers, args.reports_per_developer, args.vocab_size,
                             n_unlabeled=args.unlabeled, seed=args.seed)
    write_corpus(corpus, args.output)
    print(f"synth: wrote {len(corpus)} reports", file=sys.stderr)


COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config is not None:
            args = _apply_config(parser, argv, args)
    except UsageError as exc:
        print(f"bugtriage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if hasattr(args, "output") and args.output is None:
            raise UsageError(f"{args.command}: an output path (-o/--output) is required")
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bugtriage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TriageError, OSError, ValueError, KeyError) as exc:
        print(f"bugtriage: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"bugtriage: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
