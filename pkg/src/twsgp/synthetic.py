"""Synthetic labeled corpora with planted class-indicative terms."""

from __future__ import annotations

import numpy as np

from .corpus import Document, TextCorpus


def planted_corpus(n_docs: int = 200, vocab_size: int = 60, n_indicative: int = 10,
                   n_classes: int = 2, doc_length: int = 30, elevation: float = 4.0,
                   zipf_exponent: float = 1.0, seed: int = 0) -> TextCorpus:
    """Documents over terms ``t00..t{V-1}`` with Zipf-distributed term rates.

    Every term has a background rate proportional to ``rank ** -zipf_exponent``
    (ranks are a random permutation).  The first ``n_indicative`` terms are
    split evenly among the classes, and inside its own class an indicative
    term's rate is multiplied by ``elevation``.  Documents have exactly
    ``doc_length`` tokens and classes are balanced.
    """
    if n_indicative < n_classes or n_indicative > vocab_size:
        raise ValueError("need n_classes <= n_indicative <= vocab_size")
    rng = np.random.default_rng(seed)
    width = len(str(vocab_size - 1))
    names = [f"t{j:0{width}d}" for j in range(vocab_size)]
    base = (rng.permutation(vocab_size) + 1.0) ** -zipf_exponent
    dists = []
    for owned in np.array_split(np.arange(n_indicative), n_classes):
        rate = base.copy()
        rate[owned] *= elevation
        dists.append(rate / rate.sum())
    labels = np.arange(n_docs) % n_classes
    rng.shuffle(labels)
    docs = []
    for i, c in enumerate(labels):
        tokens = rng.choice(vocab_size, size=doc_length, p=dists[c])
        docs.append(Document(f"doc{i:04d}", " ".join(names[t] for t in tokens), int(c)))
    return TextCorpus(docs, [f"class{c}" for c in range(n_classes)])
