"""Supervised and unsupervised term statistics, served as terminal matrices.

Everything is fitted on a training :class:`~twsgp.corpus.DocumentSet`.  A
terminal is one of 22 building blocks: two constants, seventeen per-term
vectors that get repeated down every document row, and three document-term
matrices built from the counts of whichever dataset is being represented.
"""

from __future__ import annotations

import enum
import json
import math
import os
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import DocumentSet, Vocabulary

# rate clipping before inverse-normal / log-odds
RATE_MIN = 0.0005
RATE_MAX = 1.0 - RATE_MIN
POWER_EXPONENT = 5
STATS_FORMAT_VERSION = 1


class StatsError(ValueError):
    pass


class Kind(enum.Enum):
    CONSTANT = "constant"
    TERM_VECTOR = "term-vector"
    DOC_TERM = "doc-term-matrix"


class Terminal(enum.IntEnum):
    W1 = 1    # N (training documents)
    W2 = 2    # |V|
    W3 = 3    # CHI
    W4 = 4    # IG
    W5 = 5    # TF-IDF
    W6 = 6    # TF
    W7 = 7    # global term frequency
    W8 = 8    # TP
    W9 = 9    # FP
    W10 = 10  # TN
    W11 = 11  # FN
    W12 = 12  # accuracy of term-as-classifier
    W13 = 13  # accuracy balance
    W14 = 14  # BNS
    W15 = 15  # within-class document frequency
    W16 = 16  # F-measure
    W17 = 17  # odds ratio
    W18 = 18  # power
    W19 = 19  # probability ratio
    W20 = 20  # max term count
    W21 = 21  # RF
    W22 = 22  # TF-RF

    @property
    def kind(self) -> Kind:
        if self in (Terminal.W1, Terminal.W2):
            return Kind.CONSTANT
        if self in (Terminal.W5, Terminal.W6, Terminal.W22):
            return Kind.DOC_TERM
        return Kind.TERM_VECTOR


TERMINALS = tuple(Terminal)

# term-vector terminal -> TermStats attribute
VECTOR_FIELDS = {
    Terminal.W3: "chi",
    Terminal.W4: "ig",
    Terminal.W7: "global_tf",
    Terminal.W8: "tp_g",
    Terminal.W9: "fp_g",
    Terminal.W10: "tn_g",
    Terminal.W11: "fn_g",
    Terminal.W12: "accuracy",
    Terminal.W13: "acc_balance",
    Terminal.W14: "bns",
    Terminal.W15: "dfreq",
    Terminal.W16: "fmeasure",
    Terminal.W17: "odds_ratio",
    Terminal.W18: "power",
    Terminal.W19: "prob_ratio",
    Terminal.W20: "max_term",
    Terminal.W21: "rf",
}

STANDARD_SCHEMES = ("B", "TF", "TFIDF", "TF-IG", "TF-CHI", "TF-RF")

# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549671010115819e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _ppf_scalar(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("quantile requires 0 < p < 1")
    if p > 0.5:
        # 1 - p is exact here; the correction step below is accurate only for p <= 0.5
        return -_ppf_scalar(1.0 - p)
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    # one Halley step brings the ~1e-9 relative error down to machine precision
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def norm_ppf(p):
    """Inverse of the standard normal CDF, elementwise."""
    arr = np.asarray(p, dtype=np.float64)
    out = np.vectorize(_ppf_scalar, otypes=[np.float64])(arr) if arr.size else arr.copy()
    return out if arr.ndim else float(out)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _entropy(probs: np.ndarray, axis: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, -probs * np.log2(np.where(probs > 0, probs, 1.0)), 0.0)
    return terms.sum(axis=axis)


@dataclass(frozen=True)
class ContingencyTable:
    """Document counts per (term, class); arrays of shape |V| x K."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def from_counts(cls, ds: DocumentSet) -> "ContingencyTable":
        presence = (ds.counts > 0).astype(np.int64).tocsc()
        onehot = np.zeros((ds.n_docs, ds.n_classes), dtype=np.int64)
        onehot[np.arange(ds.n_docs), ds.labels] = 1
        tp = np.asarray(presence.T @ onehot, dtype=np.int64)
        df = np.asarray(presence.sum(axis=0)).ravel()[:, None]
        n_c = onehot.sum(axis=0)[None, :]
        fp = df - tp
        fn = n_c - tp
        tn = ds.n_docs - tp - fp - fn
        return cls(tp, fp, fn, tn)


def _globalize(per_class: np.ndarray, priors: np.ndarray, how: str) -> np.ndarray:
    if how == "max":
        return per_class.max(axis=1)
    if how == "mean":
        return per_class @ priors
    raise StatsError(f"unknown globalization {how!r}")


class TermStats:
    """Per-term statistics fitted on a training set.

    Per-(term, class) statistics are reduced to one value per term by
    ``globalization``: ``"max"`` over classes, or ``"mean"`` weighted by the
    class priors.
    """

    VECTORS = ("idf", "ig", "chi", "rf", "bns", "odds_ratio", "power", "prob_ratio",
               "fmeasure", "accuracy", "acc_balance", "dfreq", "global_tf", "max_term",
               "tp_g", "fp_g", "tn_g", "fn_g")

    def __init__(self, vocab: Vocabulary, n_train: int, class_priors: np.ndarray,
                 contingency: ContingencyTable, vectors: dict[str, np.ndarray],
                 globalization: str = "max", class_names: Sequence[str] = ()):
        self.vocab = vocab
        self.n_train = int(n_train)
        self.vocab_size = len(vocab)
        self.class_priors = np.asarray(class_priors, dtype=np.float64)
        self.contingency = contingency
        self.globalization = globalization
        self.class_names = tuple(class_names)
        for name in self.VECTORS:
            vec = np.asarray(vectors[name], dtype=np.float64)
            if vec.shape != (self.vocab_size,):
                raise StatsError(f"{name}: expected length {self.vocab_size}")
            vec.setflags(write=False)
            setattr(self, name, vec)
        self._cache: dict = {}
        self._lock = threading.Lock()

    @property
    def n_classes(self) -> int:
        return len(self.class_priors)

    @classmethod
    def fit(cls, train: DocumentSet, globalization: str = "max") -> "TermStats":
        n, k = train.n_docs, train.n_classes
        class_sizes = np.bincount(train.labels, minlength=k)
        if (class_sizes == 0).any():
            empty = [int(c) for c in np.flatnonzero(class_sizes == 0)]
            raise StatsError(f"classes without training documents: {empty}")
        ct = ContingencyTable.from_counts(train)
        tp, fp, fn, tn = (a.astype(np.float64) for a in (ct.tp, ct.fp, ct.fn, ct.tn))
        priors = class_sizes / n
        df = tp[:, 0] + fp[:, 0]

        tpr = _safe_div(tp, tp + fn)
        fpr = _safe_div(fp, fp + tn)
        tpr_c = np.clip(tpr, RATE_MIN, RATE_MAX)
        fpr_c = np.clip(fpr, RATE_MIN, RATE_MAX)

        chi = _safe_div(n * (tp * tn - fp * fn) ** 2, (tp + fp) * (fn + tn) * (tp + fn) * (fp + tn))
        rf = np.log2(2.0 + tp / np.maximum(1.0, fp))
        bns = np.abs(norm_ppf(tpr_c) - norm_ppf(fpr_c))
        odds = np.log2((tpr_c * (1 - fpr_c)) / ((1 - tpr_c) * fpr_c))
        power = (1 - fpr) ** POWER_EXPONENT - (1 - tpr) ** POWER_EXPONENT
        prob_ratio = tpr / np.maximum(fpr, RATE_MIN)
        precision = _safe_div(tp, tp + fp)
        fmeasure = _safe_div(2 * precision * tpr, precision + tpr)
        accuracy = (tp + tn) / n
        acc_balance = np.abs(tpr - fpr)

        # information gain of term presence against the class variable
        p_t = df / n
        h_c = _entropy(priors[None, :], axis=1)[0]
        h_given_t = _entropy(_safe_div(tp, df[:, None]), axis=1)
        h_given_not = _entropy(_safe_div(fn, (n - df)[:, None]), axis=1)
        ig = np.maximum(h_c - (p_t * h_given_t + (1 - p_t) * h_given_not), 0.0)

        counts = train.counts
        g = lambda a: _globalize(a, priors, globalization)
        vectors = {
            "idf": np.log2(n / np.maximum(df, 1.0)),  # df=0 only for projected vocabularies
            "ig": ig,
            "chi": g(chi),
            "rf": g(rf),
            "bns": g(bns),
            "odds_ratio": g(odds),
            "power": g(power),
            "prob_ratio": g(prob_ratio),
            "fmeasure": g(fmeasure),
            "accuracy": g(accuracy),
            "acc_balance": g(acc_balance),
            "dfreq": g(tpr),
            "global_tf": np.asarray(counts.sum(axis=0), dtype=np.float64).ravel(),
            "max_term": counts.max(axis=0).toarray().ravel().astype(np.float64)
            if counts.shape[0] else np.zeros(counts.shape[1]),
            "tp_g": g(tp),
            "fp_g": g(fp),
            "tn_g": g(tn),
            "fn_g": g(fn),
        }
        return cls(train.vocab, n, priors, ct, vectors, globalization, train.class_names)

    def vector(self, terminal: Terminal) -> np.ndarray:
        return getattr(self, VECTOR_FIELDS[Terminal(terminal)])

    def check_compatible(self, data: DocumentSet) -> None:
        if data.vocab is self.vocab:
            return
        if data.vocab.terms != self.vocab.terms:
            raise StatsError("dataset vocabulary differs from the fitted vocabulary")

    def terminal_matrix(self, terminal: Terminal, data: DocumentSet) -> np.ndarray:
        """Dense N x |V| matrix for ``terminal`` over ``data``; cached per dataset."""
        self.check_compatible(data)
        terminal = Terminal(terminal)
        key = (id(data), terminal)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None and hit[0] is data:
                return hit[1]
        mat = self._compute(terminal, data)
        mat.setflags(write=False)
        with self._lock:
            self._cache[key] = (data, mat)
        return mat

    def terminal_value(self, terminal: Terminal, data: DocumentSet) -> np.ndarray:
        """Compact form of a terminal: (1, 1) for constants, (1, |V|) for term
        vectors, (N, |V|) for document-term matrices.  Broadcasting it to
        N x |V| gives :meth:`terminal_matrix`."""
        terminal = Terminal(terminal)
        kind = terminal.kind
        if kind is Kind.CONSTANT:
            value = self.n_train if terminal is Terminal.W1 else self.vocab_size
            return np.full((1, 1), float(value))
        if kind is Kind.TERM_VECTOR:
            self.check_compatible(data)
            return self.vector(terminal)[None, :]
        return self.terminal_matrix(terminal, data)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    def _compute(self, terminal: Terminal, data: DocumentSet) -> np.ndarray:
        shape = (data.n_docs, self.vocab_size)
        if terminal is Terminal.W1:
            return np.full(shape, float(self.n_train))
        if terminal is Terminal.W2:
            return np.full(shape, float(self.vocab_size))
        if terminal.kind is Kind.TERM_VECTOR:
            return np.broadcast_to(self.vector(terminal), shape).copy()
        tf = data.counts.toarray().astype(np.float64)
        if terminal is Terminal.W6:
            return tf
        if terminal is Terminal.W5:
            return tf * self.idf[None, :]
        return tf * self.rf[None, :]

    def standard_tws(self, name: str, data: DocumentSet) -> np.ndarray:
        self.check_compatible(data)
        tf = data.counts.toarray().astype(np.float64)
        name = name.upper()
        if name == "B":
            return (tf > 0).astype(np.float64)
        if name == "TF":
            return tf
        factor = {"TFIDF": self.idf, "TF-IDF": self.idf, "TF-IG": self.ig,
                  "TF-CHI": self.chi, "TF-RF": self.rf}.get(name)
        if factor is None:
            raise StatsError(f"unknown standard scheme {name!r}; expected one of {STANDARD_SCHEMES}")
        return tf * factor[None, :]

    # -- sidecar persistence ------------------------------------------------

    def to_dict(self) -> dict:
        ct = self.contingency
        return {
            "format": "twsgp-termstats",
            "version": STATS_FORMAT_VERSION,
            "n_train": self.n_train,
            "globalization": self.globalization,
            "class_names": list(self.class_names),
            "class_priors": self.class_priors.tolist(),
            "terms": list(self.vocab.terms),
            "doc_frequency": self.vocab.doc_frequency.tolist(),
            "collection_frequency": self.vocab.collection_frequency.tolist(),
            "vectors": {name: getattr(self, name).tolist() for name in self.VECTORS},
            "contingency": {"tp": ct.tp.tolist(), "fp": ct.fp.tolist(),
                            "fn": ct.fn.tolist(), "tn": ct.tn.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TermStats":
        if d.get("format") != "twsgp-termstats":
            raise StatsError("not a term statistics file")
        if d.get("version") != STATS_FORMAT_VERSION:
            raise StatsError(f"unsupported term statistics version {d.get('version')}")
        vocab = Vocabulary(tuple(d["terms"]),
                           np.array(d["doc_frequency"], dtype=np.int64),
                           np.array(d["collection_frequency"], dtype=np.int64))
        k = len(d["class_priors"])
        ct = ContingencyTable(*(np.array(d["contingency"][f], dtype=np.int64).reshape(len(vocab), k)
                                for f in ("tp", "fp", "fn", "tn")))
        return cls(vocab, d["n_train"], np.array(d["class_priors"]), ct,
                   {k_: np.array(v) for k_, v in d["vectors"].items()},
                   d["globalization"], d.get("class_names", ()))

    def save(self, path: str | os.PathLike) -> None:
        from .fileio import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TermStats":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit(train: DocumentSet, globalization: str = "max") -> TermStats:
    return TermStats.fit(train, globalization)


def terminal_matrix(terminal: Terminal, stats: TermStats, data: DocumentSet) -> np.ndarray:
    return stats.terminal_matrix(terminal, data)


def standard_tws(name: str, stats: TermStats, data: DocumentSet) -> np.ndarray:
    return stats.standard_tws(name, data)
