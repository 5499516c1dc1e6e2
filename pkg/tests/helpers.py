"""Shared builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from twsgp.corpus import DocumentSet, Vocabulary

# Five documents over six terms a..f; classes 0,0,0,1,1.
TOY_COUNTS = np.array([
    [2, 1, 1, 0, 0, 0],   # "a a b c"
    [1, 0, 0, 1, 0, 0],   # "a d"
    [0, 2, 0, 0, 1, 0],   # "b b e"
    [0, 0, 1, 0, 0, 2],   # "c f f"
    [1, 0, 0, 0, 1, 1],   # "a e f"
])
TOY_LABELS = np.array([0, 0, 0, 1, 1])
TOY_TERMS = ("a", "b", "c", "d", "e", "f")

# Worked by hand from the table above.
TOY_DF = [3, 2, 2, 1, 2, 2]
TOY_IDF = [math.log2(5 / df) for df in TOY_DF]
# log2(2 + tp / max(1, fp)) for each class, maximum over the two classes
TOY_RF = [2.0, 2.0, math.log2(3), math.log2(3), math.log2(3), 2.0]


def docset(counts, labels, n_classes=None, terms=None) -> DocumentSet:
    counts = np.asarray(counts, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    terms = tuple(terms) if terms is not None else tuple(f"t{j}" for j in range(counts.shape[1]))
    vocab = Vocabulary(terms, (counts > 0).sum(axis=0).astype(np.int64), counts.sum(axis=0).astype(np.int64))
    k = n_classes if n_classes is not None else max(2, int(labels.max()) + 1)
    return DocumentSet(sp.csr_matrix(counts), labels, vocab, k, tuple(f"d{i}" for i in range(len(labels))))


def toy_set() -> DocumentSet:
    return docset(TOY_COUNTS, TOY_LABELS, 2, TOY_TERMS)


def random_set(rng: np.random.Generator, n=None, v=None, k=None, density=None) -> DocumentSet:
    """Random count matrix where every class has at least one document."""
    k = k or int(rng.integers(2, 5))
    n = n or int(rng.integers(k, 51))
    v = v or int(rng.integers(1, 21))
    density = rng.uniform(0.05, 0.9) if density is None else density
    counts = rng.poisson(2.0, size=(n, v)) * (rng.random((n, v)) < density)
    labels = np.concatenate([np.arange(k), rng.integers(k, size=n - k)])
    rng.shuffle(labels)
    return docset(counts, labels, k)


def brute_contingency(counts: np.ndarray, labels: np.ndarray, k: int):
    """tp/fp/fn/tn per (term, class) by enumerating documents one at a time."""
    n, v = counts.shape
    out = {name: np.zeros((v, k), dtype=np.int64) for name in ("tp", "fp", "fn", "tn")}
    for j in range(v):
        for c in range(k):
            for i in range(n):
                present = counts[i, j] > 0
                positive = labels[i] == c
                key = ("tp" if positive else "fp") if present else ("fn" if positive else "tn")
                out[key][j, c] += 1
    return out


def confusion_f1(pred, truth, k: int) -> float:
    """Macro-F1 written out from per-class counts, independently of the library."""
    total = 0.0
    for c in range(k):
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return total / k


def write_tsv(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.documents:
            fh.write(f"{corpus.class_names[d.label]}\t{d.text}\n")


# "criterion N: PASS|FAIL ..." lines collected by the acceptance tests and printed in the summary
ACCEPTANCE_LINES: list[str] = []
