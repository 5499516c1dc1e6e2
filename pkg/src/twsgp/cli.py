"""Command line interface: ``twsgp learn | baselines | apply | sweep | stats | parse``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, experiment as ex
from .classifier import ClassifierError
from .corpus import CHAR3, WORD, CorpusError
from .expr import ParseError, depth, parse_prefix, print_prefix, size, terminals, TERMINAL_NAMES
from .fileio import atomic_write_text
from .termstats import StatsError

log = logging.getLogger("twsgp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

# Published reference figures (macro-F1 %, best fixed scheme), printed for context only.
REFERENCE = {
    "reuters-8": ("TF", 86.94),
}

# flag name -> config key, for options shared by the corpus-consuming commands
_CONFIG_FLAGS = {
    "format": "format", "test_corpus": "test_corpus", "name": "name", "tokenizer": "tokenizer",
    "lowercase": "lowercase", "top_k": "top_k", "train_fraction": "train_fraction",
    "folds": "folds", "pop": "pop", "gens": "gens", "tournament": "tournament",
    "p_crossover": "p_crossover", "p_mutation": "p_mutation", "max_depth": "max_depth",
    "elitism": "elitism", "lam": "lam", "epochs": "epochs", "scale": "scale",
    "normalize": "normalize", "globalization": "globalization", "workers": "workers",
    "seed": "seeds", "out": "out",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_corpus_options(p: argparse.ArgumentParser, corpus_required: bool = True) -> None:
    if corpus_required:
        p.add_argument("corpus", nargs="?", help="corpus path (or set 'corpus' in --config)")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--format", choices=["labeled-dirs", "tsv", "svmlight-counts"],
                   help="corpus format (default: inferred from the path)")
    p.add_argument("--test-corpus", help="predefined test split (otherwise a stratified split is drawn)")
    p.add_argument("--name", help="dataset name used in outputs")
    p.add_argument("--tokenizer", choices=[WORD, CHAR3])
    p.add_argument("--lowercase", choices=["true", "false"])
    p.add_argument("--top-k", help="vocabulary size, or 'all' (default 2000)")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", help="seed list, e.g. 1 or 1-5 or 1,3,7")
    p.add_argument("--lam", type=float, help="SVM regularization")
    p.add_argument("--epochs", type=int)
    p.add_argument("--scale", choices=["global", "column", "none"])
    p.add_argument("--normalize", choices=["true", "false"])
    p.add_argument("--globalization", choices=["max", "mean"])
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key")


def _add_gp_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--folds", type=int)
    p.add_argument("--pop", type=int)
    p.add_argument("--gens", type=int)
    p.add_argument("--tournament", type=int)
    p.add_argument("--p-crossover", type=float)
    p.add_argument("--p-mutation", type=float)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--elitism", type=int)
    p.add_argument("--workers", type=int, help="threads for fitness evaluation")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twsgp", description="Learn term-weighting schemes by genetic programming.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("learn", help="evolve a scheme on a corpus and evaluate it on held-out data")
    _add_corpus_options(p)
    _add_gp_options(p)
    p.add_argument("--out", help="output directory (default: runs)")

    p = sub.add_parser("baselines", help="evaluate the six standard schemes")
    _add_corpus_options(p)
    p.add_argument("--output", help="write the table as CSV here")
    p.add_argument("--reference", choices=sorted(REFERENCE), help="also print a published reference figure")

    p = sub.add_parser("apply", help="evaluate a learned scheme on a corpus")
    p.add_argument("model", nargs="?", help="model file or prefix expression")
    _add_corpus_options(p)
    p.add_argument("--own-vocab", action="store_true",
                   help="use the corpus's own top-k vocabulary instead of the model's")
    p.add_argument("--model-stats", action="store_true",
                   help="reuse the model's fitted statistics instead of refitting on the corpus")
    p.add_argument("--matrix", action="store_true", help="models x datasets mode; emits CSV")
    p.add_argument("--models", nargs="+", default=[], help="(matrix) model files or expressions")
    p.add_argument("--corpora", nargs="+", default=[], help="(matrix) corpus paths")
    p.add_argument("--with-baselines", action="store_true", help="(matrix) add the six standard schemes")
    p.add_argument("--output", help="write the report (JSON) or matrix (CSV) here")

    p = sub.add_parser("sweep", help="performance against vocabulary size")
    p.add_argument("model", help="model file or prefix expression")
    _add_corpus_options(p)
    p.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--output", help="write CSV here (default: stdout)")

    p = sub.add_parser("stats", help="fit and dump term statistics of the training split")
    _add_corpus_options(p)
    p.add_argument("--output", help="write the statistics JSON here")
    p.add_argument("--show", type=int, default=10, help="print the top terms by this many rows")

    p = sub.add_parser("parse", help="validate and canonicalize a prefix expression")
    p.add_argument("expression")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for flag, key in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise ex.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip().replace("-", "_")] = value
    if getattr(args, "corpus", None):
        out["corpus"] = args.corpus
    return out


def load_config(args: argparse.Namespace) -> tuple[ex.ExperimentConfig, set[str]]:
    file_values = ex.read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = _overrides(args)
    return ex.build_config(file_values, overrides), set(overrides)


def _emit(text: str, output: str | None) -> None:
    if output:
        atomic_write_text(output, text)
    else:
        sys.stdout.write(text)


def cmd_learn(args) -> int:
    cfg, _ = load_config(args)
    results = ex.run_learn(cfg)
    for r in results:
        print(f"seed {r.seed}: fitness {float(r.run.best.fitness):.4f}  test macro-F1 {r.report.macro_f1:.4f}  "
              f"accuracy {r.report.accuracy:.4f}  {print_prefix(r.best)}")
    f1 = [r.report.macro_f1 for r in results]
    summary = ex.summarize(results)
    mean, std = summary[-2], summary[-1]
    print(f"macro-F1 over {len(f1)} seed(s): {mean[2]:.4f} ± {std[2]:.4f}  -> {Path(cfg.out) / 'summary.csv'}")
    return EXIT_OK


def cmd_baselines(args) -> int:
    cfg, _ = load_config(args)
    rows = []
    for seed in cfg.seeds:
        rows.extend((seed, *row) for row in ex.run_baselines(cfg, seed))
    text = ex.render_csv(("seed",) + ex.BASELINE_HEADER, rows)
    _emit(text, args.output)
    if args.output:
        sys.stdout.write(text)
    if args.reference:
        scheme, f1 = REFERENCE[args.reference]
        print(f"# published best fixed scheme on {args.reference}: {scheme}, macro-F1 {f1} "
              "(different preprocessing and solver; not a target)")
    return EXIT_OK


def cmd_apply(args) -> int:
    cfg, explicit = load_config(args)
    if args.matrix:
        if not args.models or not args.corpora:
            raise ex.ConfigError("--matrix needs --models and --corpora")
        models = [ex.read_model(m) for m in args.models]
        seed = cfg.seeds[0]
        rows = ex.apply_matrix(models, args.corpora, cfg, seed, own_vocab=args.own_vocab,
                               with_baselines=args.with_baselines)
        _emit(ex.render_csv(ex.MATRIX_HEADER, rows), args.output)
        return EXIT_OK
    if not args.model:
        raise ex.ConfigError("apply needs a model file or expression")
    model = ex.read_model(args.model)
    cfg = ex.apply_config(model, cfg, explicit)
    cfg.validate()
    report = ex.apply_model(model, cfg, cfg.seeds[0], own_vocab=args.own_vocab, model_stats=args.model_stats)
    _emit(report.to_json(), args.output)
    if args.output:
        print(f"macro-F1 {report.macro_f1:.4f}  accuracy {report.accuracy:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, explicit = load_config(args)
    model = ex.read_model(args.model)
    cfg = ex.apply_config(model, cfg, explicit)
    cfg.validate()
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError:
        raise ex.ConfigError(f"bad --fractions {args.fractions!r}") from None
    rows = ex.sweep(model, cfg, cfg.seeds[0], fractions)
    _emit(ex.render_csv(ex.SWEEP_HEADER, rows), args.output)
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg, _ = load_config(args)
    stats = ex.stats_for(cfg, cfg.seeds[0])
    if args.output:
        stats.save(args.output)
    print(f"{stats.n_train} training documents, {stats.vocab_size} terms, {stats.n_classes} classes")
    order = sorted(range(stats.vocab_size), key=lambda j: (-stats.ig[j], stats.vocab.terms[j]))
    print("term\tdf\tig\tchi\trf")
    for j in order[:max(0, args.show)]:
        print(f"{stats.vocab.terms[j]}\t{stats.vocab.doc_frequency[j]}\t{stats.ig[j]:.4f}\t"
              f"{stats.chi[j]:.4f}\t{stats.rf[j]:.4f}")
    return EXIT_OK


def cmd_parse(args) -> int:
    node = parse_prefix(args.expression)
    used = ", ".join(f"{TERMINAL_NAMES[t]}×{n}" for t, n in sorted(terminals(node).items()))
    print(print_prefix(node))
    print(f"depth {depth(node)}  size {size(node)}  terminals {used}")
    return EXIT_OK


COMMANDS = {"learn": cmd_learn, "baselines": cmd_baselines, "apply": cmd_apply,
            "sweep": cmd_sweep, "stats": cmd_stats, "parse": cmd_parse}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ex.ConfigError as exc:
        print(f"twsgp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, StatsError, ClassifierError, ParseError, json.JSONDecodeError) as exc:
        print(f"twsgp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"twsgp: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
