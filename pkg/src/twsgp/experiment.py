"""End-to-end experiment steps behind the command line.

All randomness for one run derives from a single root seed through named
streams (``split``, ``init``, ``folds``, ``sgd``), so each stage can be re-run
on its own and gets the same draws.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import statistics
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .classifier import EvalReport, Hyper, KFoldFitness, fit_and_report
from .corpus import (CHAR3, WORD, CorpusError, DocumentSet, TextCorpus, TokenizerSpec, Vocabulary,
                     build_vocabulary, load_corpus, stratified_split, vectorize, vocabulary_from_counts)
from .expr import Expr, depth, evaluate, load_model, parse_prefix, print_prefix, save_model, size
from .fileio import atomic_write_csv, atomic_write_json, csv_text
from .gp import RUNLOG_HEADER, GpConfig, GpRun, evolve
from .termstats import STANDARD_SCHEMES, TermStats

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    corpus: str = ""
    format: str = ""              # inferred from the path when empty
    test_corpus: str = ""         # optional predefined test split
    name: str = ""
    tokenizer: str = WORD
    lowercase: bool = True
    strip_punctuation: bool = True
    top_k: int | None = 2000      # None keeps every term
    train_fraction: float = 0.7
    folds: int = 3
    pop: int = 50
    gens: int = 50
    tournament: int = 3
    p_crossover: float = 0.85
    p_mutation: float = 0.15
    init_min_depth: int = 2
    init_max_depth: int = 6
    max_depth: int = 8
    elitism: int = 1
    lam: float = 1e-4
    epochs: int = 10
    scale: str = "global"
    normalize: bool = False
    globalization: str = "max"
    workers: int = 1
    seeds: list[int] = field(default_factory=lambda: [1])
    out: str = "runs"

    def tokenizer_spec(self) -> TokenizerSpec:
        return TokenizerSpec(self.tokenizer, self.lowercase, self.strip_punctuation)

    def gp_config(self, seed: int) -> GpConfig:
        return GpConfig(population_size=self.pop, generations=self.gens,
                        tournament_size=self.tournament, p_crossover=self.p_crossover,
                        p_mutation=self.p_mutation,
                        init_depth_range=(self.init_min_depth, self.init_max_depth),
                        max_depth=self.max_depth, elitism_count=self.elitism,
                        rng_seed=seed, workers=self.workers)

    def hyper(self, seed: int) -> Hyper:
        return Hyper(lam=self.lam, epochs=self.epochs, seed=stream_seed(seed, "sgd"),
                     scale=self.scale, normalize=self.normalize)

    @property
    def dataset_name(self) -> str:
        return self.name or Path(self.corpus).stem or "corpus"

    def validate(self) -> None:
        if not self.corpus:
            raise ConfigError("no corpus given")
        if not Path(self.corpus).exists():
            raise ConfigError(f"corpus {self.corpus!r} does not exist")
        if self.test_corpus and not Path(self.test_corpus).exists():
            raise ConfigError(f"test corpus {self.test_corpus!r} does not exist")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.tokenizer not in (WORD, CHAR3):
            raise ConfigError(f"tokenizer must be {WORD!r} or {CHAR3!r}")
        if self.top_k is not None and self.top_k <= 0:
            raise ConfigError("top_k must be positive (or 'all')")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        try:
            self.gp_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def coerce(key: str, raw) -> object:
    """Convert a textual config value to the type of field ``key``."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if key not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    default = getattr(ExperimentConfig(), key)
    try:
        if key == "top_k":
            return None if text.lower() in ("all", "none", "0") else int(text)
        if key == "seeds":
            return parse_seeds(text)
        if isinstance(default, bool):
            return _BOOL[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return text


def parse_seeds(text: str) -> list[int]:
    """``"1,2,3"``, ``"1-5"`` or a mix such as ``"1-3,10"``."""
    seeds = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep and lo:
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def read_config_file(path: str | Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Keys may use dashes."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        values[key] = coerce(key, value)
    return values


def build_config(file_values: dict, overrides: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for source in (file_values, overrides):
        for key, value in source.items():
            if value is None and key != "top_k":
                continue
            setattr(cfg, key, coerce(key, value))
    return cfg


# -- randomness -------------------------------------------------------------


def stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.default_rng(ss)


def stream_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(2**62))


# -- data preparation -------------------------------------------------------------


def infer_format(path: str | Path) -> str:
    p = Path(path)
    if p.is_dir():
        return "labeled-dirs"
    if p.suffix.lower() in (".tsv", ".tab"):
        return "tsv"
    with open(p, encoding="utf-8", errors="replace") as fh:
        first = fh.readline()
    if first.startswith("#V="):
        return "svmlight-counts"
    return "tsv"


def rows_digest(ids: Iterable[str]) -> str:
    h = hashlib.sha256()
    for i in sorted(ids):
        h.update(i.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


@dataclass
class Prepared:
    train: DocumentSet
    test: DocumentSet
    stats: TermStats
    class_names: list[str]
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    vocab_ids: tuple[str, ...]

    def manifest(self) -> dict:
        return {
            "train": {"rows": len(self.train_ids), "digest": rows_digest(self.train_ids)},
            "test": {"rows": len(self.test_ids), "digest": rows_digest(self.test_ids)},
            "vocabulary": {"rows": len(self.vocab_ids), "digest": rows_digest(self.vocab_ids)},
            "stats": {"rows": self.stats.n_train, "digest": rows_digest(self.train.doc_ids)},
        }


@dataclass
class Split:
    """Raw train/test material before a vocabulary is chosen."""

    train: TextCorpus | DocumentSet
    test: TextCorpus | DocumentSet
    class_names: list[str]

    @property
    def is_text(self) -> bool:
        return isinstance(self.train, TextCorpus)

    def ids(self, part) -> tuple[str, ...]:
        if isinstance(part, TextCorpus):
            return tuple(d.id for d in part.documents)
        return part.doc_ids


def _load(path: str, fmt: str, class_names=None):
    try:
        return load_corpus(path, fmt or infer_format(path), class_names)
    except OSError as exc:
        raise CorpusError(f"{path}: {exc}") from None


def split_corpus(cfg: ExperimentConfig, seed: int) -> Split:
    path = Path(cfg.corpus)
    fmt = cfg.format or infer_format(path)
    if fmt == "labeled-dirs" and (path / "train").is_dir() and (path / "test").is_dir():
        train = _load(str(path / "train"), fmt)
        test = _load(str(path / "test"), fmt, train.class_names)
        return Split(train, test, train.class_names)
    data = _load(str(path), fmt)
    if cfg.test_corpus:
        names = data.class_names if isinstance(data, TextCorpus) else list(data.class_names)
        test = _load(cfg.test_corpus, cfg.format or infer_format(cfg.test_corpus), names)
        return Split(data, test, list(names))
    labels = data.labels
    tr, te = stratified_split(labels, cfg.train_fraction, stream(seed, "split"))
    names = data.class_names if isinstance(data, TextCorpus) else list(data.class_names)
    return Split(data.subset(tr), data.subset(te), list(names))


def training_vocabulary(split: Split, spec: TokenizerSpec, top_k: int | None) -> Vocabulary:
    if split.is_text:
        return build_vocabulary(split.train.documents, spec, top_k)
    full = vocabulary_from_counts(split.train.counts, split.train.vocab.terms)
    return full if top_k is None or top_k >= len(full) else full.truncate(top_k)


def vectorize_split(split: Split, vocab: Vocabulary, spec: TokenizerSpec) -> tuple[DocumentSet, DocumentSet]:
    k = len(split.class_names)
    if split.is_text:
        return (vectorize(split.train.documents, vocab, spec, k, split.class_names),
                vectorize(split.test.documents, vocab, spec, k, split.class_names))
    return split.train.restrict(vocab), split.test.restrict(vocab)


def _refit_vocabulary(vocab: Vocabulary, train: DocumentSet) -> DocumentSet:
    """Same terms, document/collection frequencies recounted on ``train``."""
    counts = train.counts
    fresh = Vocabulary(vocab.terms, np.asarray((counts > 0).sum(axis=0)).ravel().astype(np.int64),
                       np.asarray(counts.sum(axis=0)).ravel().astype(np.int64))
    return DocumentSet(counts, train.labels, fresh, train.n_classes, train.doc_ids, train.class_names)


def prepare(cfg: ExperimentConfig, seed: int, vocab: Vocabulary | None = None,
            split: Split | None = None) -> Prepared:
    """Split, build (or adopt) the vocabulary, vectorize and fit statistics on the training part."""
    split = split or split_corpus(cfg, seed)
    spec = cfg.tokenizer_spec()
    if vocab is None:
        vocab = training_vocabulary(split, spec, cfg.top_k)
        train, test = vectorize_split(split, vocab, spec)
    else:
        train, test = vectorize_split(split, vocab, spec)
        train = _refit_vocabulary(vocab, train)
        test = DocumentSet(test.counts, test.labels, train.vocab, test.n_classes, test.doc_ids, test.class_names)
    if len(np.unique(train.labels)) < train.n_classes:
        missing = sorted(set(range(train.n_classes)) - set(train.labels.tolist()))
        raise CorpusError(f"training split has no documents for classes {missing}")
    stats = TermStats.fit(train, cfg.globalization)
    return Prepared(train, test, stats, split.class_names, split.ids(split.train),
                    split.ids(split.test), split.ids(split.train))


def report_for(matrix_train: np.ndarray, matrix_test: np.ndarray, prep: Prepared, hyper: Hyper) -> EvalReport:
    return fit_and_report(matrix_train, prep.train.labels, matrix_test, prep.test.labels,
                          prep.train.n_classes, hyper, prep.class_names)


def evaluate_expr(node: Expr, prep: Prepared, hyper: Hyper) -> EvalReport:
    return report_for(evaluate(node, prep.stats, prep.train), evaluate(node, prep.stats, prep.test), prep, hyper)


def evaluate_scheme(name: str, prep: Prepared, hyper: Hyper) -> EvalReport:
    return report_for(prep.stats.standard_tws(name, prep.train), prep.stats.standard_tws(name, prep.test),
                      prep, hyper)


# -- learn --------------------------------------------------------------------


@dataclass
class LearnResult:
    seed: int
    run: GpRun
    report: EvalReport
    model_path: Path
    prep: Prepared

    @property
    def best(self) -> Expr:
        return self.run.best.expr


SUMMARY_HEADER = ("seed", "fitness", "test_macro_f1", "test_accuracy", "size", "depth", "expr")


def learn_one(cfg: ExperimentConfig, seed: int, out_dir: Path) -> LearnResult:
    prep = prepare(cfg, seed)
    fitness = KFoldFitness(prep.stats, prep.train, cfg.folds, stream_seed(seed, "folds"), cfg.hyper(seed))
    gp_cfg = cfg.gp_config(seed)

    def progress(g):
        log.info("seed %d gen %d best %.4f mean %.4f size %d", seed, g.generation, g.best_fitness,
                 g.mean_fitness, g.best_size)

    run = evolve(gp_cfg, fitness, stream(seed, "init"), on_generation=progress)
    best = run.best.expr
    report = evaluate_expr(best, prep, cfg.hyper(seed))

    out_dir.mkdir(parents=True, exist_ok=True)
    prep.stats.save(out_dir / "stats.json")
    atomic_write_csv(out_dir / "runlog.csv", RUNLOG_HEADER, run.rows())
    report.save(out_dir / "report.json", out_dir / "confusion.csv")
    manifest = prep.manifest()
    manifest["fitness"] = {"rows": fitness.train.n_docs, "digest": rows_digest(fitness.train.doc_ids)}
    manifest["folds"] = fitness.k
    atomic_write_json(out_dir / "manifest.json", manifest)
    model_path = out_dir / "model.tws"
    save_model(model_path, best, model_metadata(cfg, seed, prep, run.best.fitness, report))
    return LearnResult(seed, run, report, model_path, prep)


def model_metadata(cfg: ExperimentConfig, seed: int, prep: Prepared, fitness: float, report: EvalReport) -> dict:
    return {
        "version": __version__,
        "dataset": cfg.dataset_name,
        "seed": seed,
        "fitness": repr(float(fitness)),
        "test_macro_f1": repr(report.macro_f1),
        "test_accuracy": repr(report.accuracy),
        "vocab_size": prep.stats.vocab_size,
        "vocab_hash": prep.train.vocab.digest(),
        "stats": "stats.json",
        "tokenizer": cfg.tokenizer,
        "lowercase": cfg.lowercase,
        "strip_punctuation": cfg.strip_punctuation,
        "top_k": "all" if cfg.top_k is None else cfg.top_k,
        "train_fraction": cfg.train_fraction,
        "folds": cfg.folds,
        "lam": cfg.lam,
        "epochs": cfg.epochs,
        "scale": cfg.scale,
        "normalize": cfg.normalize,
        "globalization": cfg.globalization,
    }


def summarize(results: Sequence[LearnResult]) -> list[tuple]:
    rows = [(r.seed, float(r.run.best.fitness), r.report.macro_f1, r.report.accuracy,
             size(r.best), depth(r.best), print_prefix(r.best)) for r in results]
    cols = list(zip(*[row[1:4] for row in rows])) if rows else []
    if rows:
        rows.append(("mean", *[statistics.fmean(c) for c in cols], "", "", ""))
        rows.append(("std", *[statistics.stdev(c) if len(c) > 1 else 0.0 for c in cols], "", "", ""))
    return rows


def run_learn(cfg: ExperimentConfig) -> list[LearnResult]:
    cfg.validate()
    out = Path(cfg.out)
    results = []
    for seed in cfg.seeds:
        res = learn_one(cfg, seed, out / f"seed-{seed}")
        log.info("seed %d: %s test macro-F1 %.4f", seed, print_prefix(res.best), res.report.macro_f1)
        results.append(res)
    atomic_write_csv(out / "summary.csv", SUMMARY_HEADER, summarize(results))
    return results


# -- baselines ---------------------------------------------------------------------

BASELINE_HEADER = ("scheme", "macro_f1", "accuracy", "best")


def baseline_rows(prep: Prepared, hyper: Hyper) -> list[tuple]:
    reports = [(name, evaluate_scheme(name, prep, hyper)) for name in STANDARD_SCHEMES]
    best = max(range(len(reports)), key=lambda i: (reports[i][1].macro_f1, -i))
    return [(name, r.macro_f1, r.accuracy, int(i == best)) for i, (name, r) in enumerate(reports)]


def run_baselines(cfg: ExperimentConfig, seed: int) -> list[tuple]:
    cfg.validate()
    return baseline_rows(prepare(cfg, seed), cfg.hyper(seed))


# -- apply -------------------------------------------------------------------------


@dataclass
class LoadedModel:
    expr: Expr
    meta: dict
    path: Path | None = None

    @property
    def label(self) -> str:
        if self.path is not None:
            return self.meta.get("dataset") or self.path.stem
        return print_prefix(self.expr)

    def stats(self) -> TermStats | None:
        if self.path is None or "stats" not in self.meta:
            return None
        return TermStats.load(self.path.parent / self.meta["stats"])


def read_model(source: str) -> LoadedModel:
    """A model file path, or an inline prefix expression."""
    p = Path(source)
    if p.is_file():
        expr, meta = load_model(p)
        return LoadedModel(expr, meta, p)
    return LoadedModel(parse_prefix(source), {})


def apply_config(model: LoadedModel, base: ExperimentConfig, explicit: set[str]) -> ExperimentConfig:
    """Model metadata supplies defaults for anything not set explicitly on the command line."""
    cfg = dataclasses.replace(base)
    meta = model.meta
    for key in ("tokenizer", "lowercase", "strip_punctuation", "top_k", "train_fraction", "lam",
                "epochs", "scale", "normalize", "globalization", "folds"):
        if key in meta and key not in explicit:
            setattr(cfg, key, coerce(key, meta[key]))
    if "seed" in meta and "seeds" not in explicit:
        cfg.seeds = [int(meta["seed"])]
    if "tokenizer" in explicit and "tokenizer" in meta and meta["tokenizer"] != base.tokenizer:
        log.warning("model was learned with tokenizer %r but corpus uses %r; proceeding",
                    meta["tokenizer"], base.tokenizer)
    return cfg


def apply_model(model: LoadedModel, cfg: ExperimentConfig, seed: int, own_vocab: bool = False,
                model_stats: bool = False) -> EvalReport:
    """Evaluate a learned scheme on ``cfg.corpus`` (train on its train split, score its test split).

    By default the corpus is vectorized over the model's stored vocabulary
    (unknown terms become zero columns) and the statistics are re-estimated on
    the corpus's training split.  ``own_vocab`` builds the corpus's own top-k
    vocabulary instead; ``model_stats`` reuses the model's fitted statistics.
    """
    stored = model.stats()
    vocab = None
    if stored is not None and not own_vocab:
        vocab = stored.vocab
    prep = prepare(cfg, seed, vocab=vocab)
    if model_stats:
        if stored is None:
            raise ConfigError("--model-stats needs a model file with a statistics sidecar")
        if stored.n_classes != prep.train.n_classes or own_vocab:
            raise ConfigError("model statistics do not match this corpus (classes or vocabulary differ)")
        prep.stats = stored
        prep.train = DocumentSet(prep.train.counts, prep.train.labels, stored.vocab, prep.train.n_classes,
                                 prep.train.doc_ids, prep.train.class_names)
        prep.test = DocumentSet(prep.test.counts, prep.test.labels, stored.vocab, prep.test.n_classes,
                                prep.test.doc_ids, prep.test.class_names)
    return evaluate_expr(model.expr, prep, cfg.hyper(seed))


MATRIX_HEADER = ("tws", "dataset", "macro_f1", "accuracy")


def apply_matrix(models: Sequence[LoadedModel], corpora: Sequence[str], base: ExperimentConfig,
                 seed: int, own_vocab: bool = True, with_baselines: bool = False) -> list[tuple]:
    rows = []
    for path in corpora:
        cfg = dataclasses.replace(base, corpus=path, format="", name="")
        cfg.validate()
        prep_cache: dict = {}
        for m in models:
            vocab = None if own_vocab else (m.stats().vocab if m.stats() is not None else None)
            key = None if vocab is None else vocab.terms
            if key not in prep_cache:
                prep_cache[key] = prepare(cfg, seed, vocab=vocab)
            r = evaluate_expr(m.expr, prep_cache[key], cfg.hyper(seed))
            rows.append((m.label, cfg.dataset_name, r.macro_f1, r.accuracy))
        if with_baselines:
            prep = prep_cache.get(None) or prepare(cfg, seed)
            for name, f1, acc, _ in baseline_rows(prep, cfg.hyper(seed)):
                rows.append((name, cfg.dataset_name, f1, acc))
    return rows


# -- vocabulary sweep ------------------------------------------------------------

SWEEP_HEADER = ("fraction", "vocab_size", "scheme", "macro_f1", "accuracy")


def sweep(model: LoadedModel, cfg: ExperimentConfig, seed: int, fractions: Sequence[float]) -> list[tuple]:
    """Re-learn statistics and classifiers with growing frequency-ranked vocabularies."""
    for f in fractions:
        if not 0 < f <= 1:
            raise ConfigError(f"fraction {f} outside (0, 1]")
    split = split_corpus(cfg, seed)
    spec = cfg.tokenizer_spec()
    full = training_vocabulary(split, spec, None)
    hyper = cfg.hyper(seed)
    rows = []
    label = "learned"
    for f in fractions:
        n_terms = max(1, math.ceil(f * len(full) - 1e-9))
        vocab = full.truncate(n_terms)
        train, test = vectorize_split(split, vocab, spec)
        prep = Prepared(train, test, TermStats.fit(train, cfg.globalization), split.class_names,
                        split.ids(split.train), split.ids(split.test), split.ids(split.train))
        r = evaluate_expr(model.expr, prep, hyper)
        rows.append((f, n_terms, label, r.macro_f1, r.accuracy))
        for name, f1, acc, _ in baseline_rows(prep, hyper):
            rows.append((f, n_terms, name, f1, acc))
    return rows


def stats_for(cfg: ExperimentConfig, seed: int) -> TermStats:
    cfg.validate()
    return prepare(cfg, seed).stats


def render_csv(header, rows) -> str:
    return csv_text(header, rows)
