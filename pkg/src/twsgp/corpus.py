"""Document collections in vector-space form.

Text corpora are read from labeled directories or TSV files, tokenized into
word unigrams or character 3-grams and turned into sparse count matrices over a
frequency-ranked vocabulary.  Precomputed bag-of-words counts (e.g. visual
words) are read from svmlight-style files and skip tokenization entirely.
"""

from __future__ import annotations

import hashlib
import math
import os
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""


WORD = "word"
CHAR3 = "char3"
TOKENIZER_MODES = (WORD, CHAR3)
FORMATS = ("labeled-dirs", "tsv", "svmlight-counts")


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    label: int


@dataclass(frozen=True)
class TokenizerSpec:
    mode: str = WORD
    lowercase: bool = True
    strip_punctuation: bool = True

    def __post_init__(self):
        if self.mode not in TOKENIZER_MODES:
            raise CorpusError(f"unknown tokenizer mode {self.mode!r}")


@dataclass
class TextCorpus:
    """Labeled raw documents plus the class names their integer labels index."""

    documents: list[Document]
    class_names: list[str]

    def __len__(self):
        return len(self.documents)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: Iterable[int]) -> "TextCorpus":
        return TextCorpus([self.documents[i] for i in indices], self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.documents], dtype=np.int64)


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    doc_frequency: np.ndarray
    collection_frequency: np.ndarray
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})
        if len(self.index) != len(self.terms):
            raise CorpusError("duplicate vocabulary terms")

    def __len__(self):
        return len(self.terms)

    def truncate(self, top_k: int) -> "Vocabulary":
        """Keep the ``top_k`` highest-ranked terms (a prefix of the ranking)."""
        if top_k <= 0:
            raise CorpusError("top_k must be positive")
        return Vocabulary(
            self.terms[:top_k],
            self.doc_frequency[:top_k].copy(),
            self.collection_frequency[:top_k].copy(),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.terms:
            h.update(t.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class DocumentSet:
    """Sparse term counts (N x |V|) with labels; the corpus in VSM form."""

    counts: sp.csr_matrix
    labels: np.ndarray
    vocab: Vocabulary
    n_classes: int
    doc_ids: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        n, v = self.counts.shape
        if v != len(self.vocab):
            raise CorpusError(f"count matrix has {v} columns, vocabulary has {len(self.vocab)} terms")
        if len(self.labels) != n:
            raise CorpusError("one label per row required")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise CorpusError("label outside 0..K-1")
        if self.n_classes < 2:
            raise CorpusError("at least two classes required")
        if self.counts.nnz and self.counts.data.min() < 0:
            raise CorpusError("negative term count")

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    def subset(self, rows: Sequence[int]) -> "DocumentSet":
        rows = np.asarray(rows, dtype=np.int64)
        ids = tuple(self.doc_ids[i] for i in rows) if self.doc_ids else ()
        return DocumentSet(self.counts[rows], self.labels[rows], self.vocab,
                           self.n_classes, ids, self.class_names)

    def restrict(self, vocab: Vocabulary) -> "DocumentSet":
        """Re-express the counts over ``vocab`` by term string; unknown terms give zero columns."""
        target = vocab.index
        remap = np.array([target.get(t, -1) for t in self.vocab.terms], dtype=np.int64)
        coo = self.counts.tocoo()
        new_cols = remap[coo.col] if coo.nnz else coo.col
        keep = new_cols >= 0
        out = sp.csr_matrix((coo.data[keep], (coo.row[keep], new_cols[keep])),
                            shape=(self.n_docs, len(vocab)), dtype=np.int64)
        out.sort_indices()
        return DocumentSet(out, self.labels, vocab, self.n_classes, self.doc_ids, self.class_names)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(doc: Document | str, spec: TokenizerSpec = TokenizerSpec()) -> list[str]:
    text = doc.text if isinstance(doc, Document) else doc
    if spec.lowercase:
        text = text.lower()
    if spec.mode == CHAR3:
        return [text[i:i + 3] for i in range(len(text) - 2)]
    tokens = text.split()
    if spec.strip_punctuation:
        tokens = [_strip_punct(t) for t in tokens]
    return [t for t in tokens if t]


def _rank_terms(cf: Counter, df: Counter, top_k: int | None) -> Vocabulary:
    ranked = sorted(cf, key=lambda t: (-cf[t], t))
    if top_k is not None:
        ranked = ranked[:top_k]
    return Vocabulary(
        tuple(ranked),
        np.array([df[t] for t in ranked], dtype=np.int64),
        np.array([cf[t] for t in ranked], dtype=np.int64),
    )


def build_vocabulary(docs: Sequence[Document], spec: TokenizerSpec = TokenizerSpec(),
                     top_k: int | None = None) -> Vocabulary:
    """Rank terms by collection frequency (ties lexicographic) and keep ``top_k``.

    ``top_k=None`` keeps every term.
    """
    if not docs:
        raise CorpusError("cannot build a vocabulary from zero documents")
    if top_k is not None and top_k <= 0:
        raise CorpusError("top_k must be positive")
    cf: Counter = Counter()
    df: Counter = Counter()
    for d in docs:
        toks = tokenize(d, spec)
        cf.update(toks)
        df.update(set(toks))
    return _rank_terms(cf, df, top_k)


def vectorize(docs: Sequence[Document], vocab: Vocabulary, spec: TokenizerSpec = TokenizerSpec(),
              n_classes: int | None = None, class_names: Sequence[str] = ()) -> DocumentSet:
    index = vocab.index
    indptr = [0]
    indices: list[int] = []
    data: list[int] = []
    for d in docs:
        row = Counter(index[t] for t in tokenize(d, spec) if t in index)
        for j in sorted(row):
            indices.append(j)
            data.append(row[j])
        indptr.append(len(indices))
    counts = sp.csr_matrix(
        (np.array(data, dtype=np.int64), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(docs), len(vocab)),
    )
    labels = np.array([d.label for d in docs], dtype=np.int64)
    if n_classes is None:
        n_classes = len(class_names) if class_names else int(labels.max()) + 1
    return DocumentSet(counts, labels, vocab, n_classes,
                       tuple(d.id for d in docs), tuple(class_names))


def vocabulary_from_counts(counts: sp.spmatrix, names: Sequence[str]) -> Vocabulary:
    """Ranked vocabulary for precomputed counts (column names are kept as terms)."""
    counts = sp.csr_matrix(counts)
    cf_vec = np.asarray(counts.sum(axis=0)).ravel()
    df_vec = np.asarray((counts > 0).sum(axis=0)).ravel()
    cf = Counter({n: int(c) for n, c in zip(names, cf_vec)})
    df = Counter({n: int(c) for n, c in zip(names, df_vec)})
    return _rank_terms(cf, df, None)


def _map_labels(raw: list[str], class_names: Sequence[str] | None, where: list[str]) -> tuple[list[int], list[str]]:
    names = sorted(set(raw)) if class_names is None else list(class_names)
    lookup = {n: i for i, n in enumerate(names)}
    out = []
    for lab, loc in zip(raw, where):
        if lab not in lookup:
            raise CorpusError(f"{loc}: unknown label {lab!r}")
        out.append(lookup[lab])
    return out, names


def _load_dirs(root: Path, class_names) -> TextCorpus:
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if class_names is not None:
        for c in classes:
            if c not in class_names:
                raise CorpusError(f"{root / c}: unknown label directory {c!r}")
    names = list(class_names) if class_names is not None else classes
    docs = []
    for c in classes:
        for f in sorted(p for p in (root / c).iterdir() if p.is_file()):
            text = f.read_text(encoding="utf-8", errors="replace")
            docs.append(Document(f"{c}/{f.name}", text, names.index(c)))
    if len(names) < 2:
        raise CorpusError(f"{root}: need at least two class directories")
    return TextCorpus(docs, names)


def _load_tsv(path: Path, class_names) -> TextCorpus:
    raw, texts, where = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise CorpusError(f"{path}:{lineno}: expected 'label<TAB>text'")
            lab, text = line.split("\t", 1)
            if not lab:
                raise CorpusError(f"{path}:{lineno}: empty label")
            raw.append(lab)
            texts.append(text)
            where.append(f"{path}:{lineno}")
    labels, names = _map_labels(raw, class_names, where)
    if len(names) < 2:
        raise CorpusError(f"{path}: need at least two classes")
    docs = [Document(f"{path.name}:{i}", t, y) for i, (t, y) in enumerate(zip(texts, labels))]
    return TextCorpus(docs, names)


def _load_svmlight(path: Path, class_names) -> DocumentSet:
    n_terms = None
    raw, rows, where = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, _, val = s[1:].partition("=")
                if key.strip() == "V":
                    try:
                        n_terms = int(val)
                    except ValueError:
                        raise CorpusError(f"{path}:{lineno}: bad vocabulary header {s!r}") from None
                continue
            parts = s.split()
            entries = {}
            for item in parts[1:]:
                idx, sep, cnt = item.partition(":")
                try:
                    j, c = int(idx), int(cnt)
                except ValueError:
                    raise CorpusError(f"{path}:{lineno}: malformed entry {item!r}") from None
                if not sep or j < 0 or c < 0:
                    raise CorpusError(f"{path}:{lineno}: malformed entry {item!r}")
                entries[j] = entries.get(j, 0) + c
            raw.append(parts[0])
            rows.append(entries)
            where.append(f"{path}:{lineno}")
    if n_terms is None:
        raise CorpusError(f"{path}: missing '#V=<int>' header")
    for entries, loc in zip(rows, where):
        if entries and max(entries) >= n_terms:
            raise CorpusError(f"{loc}: term index beyond #V={n_terms}")
    if class_names is None:
        try:
            ids = sorted({int(r) for r in raw})
            class_names = [str(i) for i in range(max(ids) + 1)]
        except ValueError:
            class_names = sorted(set(raw))
    labels, names = _map_labels([str(int(r)) if r.lstrip("-").isdigit() else r for r in raw],
                                class_names, where)
    counts = sp.lil_matrix((len(rows), n_terms), dtype=np.int64)
    for i, entries in enumerate(rows):
        for j, c in entries.items():
            counts[i, j] = c
    counts = counts.tocsr()
    vocab = Vocabulary(tuple(f"f{j}" for j in range(n_terms)),
                       np.asarray((counts > 0).sum(axis=0)).ravel().astype(np.int64),
                       np.asarray(counts.sum(axis=0)).ravel().astype(np.int64))
    return DocumentSet(counts, np.array(labels, dtype=np.int64), vocab, max(len(names), 2),
                       tuple(f"{path.name}:{i}" for i in range(len(rows))), tuple(names))


def load_corpus(path: str | os.PathLike, format: str, class_names: Sequence[str] | None = None):
    """Read a corpus; text formats give a :class:`TextCorpus`, svmlight-counts a :class:`DocumentSet`."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"{path}: no such file or directory")
    if format == "labeled-dirs":
        return _load_dirs(path, class_names)
    if format == "tsv":
        return _load_tsv(path, class_names)
    if format == "svmlight-counts":
        return _load_svmlight(path, class_names)
    raise CorpusError(f"unknown corpus format {format!r}; expected one of {', '.join(FORMATS)}")


def write_svmlight_counts(ds: DocumentSet, path: str | os.PathLike) -> None:
    counts = ds.counts.tocsr()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#V={counts.shape[1]}\n")
        for i in range(counts.shape[0]):
            lo, hi = counts.indptr[i], counts.indptr[i + 1]
            items = " ".join(f"{j}:{c}" for j, c in zip(counts.indices[lo:hi], counts.data[lo:hi]))
            fh.write(f"{ds.labels[i]} {items}".rstrip() + "\n")


def stratified_split(labels: np.ndarray, train_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; each class contributes round(frac * n_c) rows (at least one) to train."""
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_tr = min(len(idx), max(1, int(math.floor(train_fraction * len(idx) + 0.5))))
        train.extend(idx[:n_tr].tolist())
        test.extend(idx[n_tr:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)
