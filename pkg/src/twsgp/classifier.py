"""Linear one-vs-rest SVM, macro-F1 and the cross-validated fitness.

The SVM is trained by stochastic subgradient descent on the hinge loss with
the Pegasos step size ``1 / (lambda * t)``; the returned weights average the
iterates of the second half of training.  A constant feature stands in for
the bias (so it is regularized like any other weight).

Features are divided by the largest absolute training value before training
(``scale="global"``).  A single divisor keeps the relative magnitudes of the
columns, which is exactly what a term-weighting scheme controls; per-column
scaling (``scale="column"``) would cancel any per-term factor such as IDF.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .corpus import DocumentSet
from .expr import Expr, evaluate
from .termstats import TermStats

log = logging.getLogger(__name__)


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class Hyper:
    lam: float = 1e-4
    epochs: int = 10
    seed: int = 0
    scale: str = "global"  # "global", "column" or "none"
    normalize: bool = False  # L2 row normalization after scaling
    average: bool = True  # return the mean iterate of the second half instead of the last


@dataclass
class LinearModel:
    weights: np.ndarray  # K x |V|
    bias: np.ndarray     # K
    scale: np.ndarray    # per-column divisor
    hyper: Hyper = field(default_factory=Hyper)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        Xs = X / self.scale[None, :]
        if self.hyper.normalize:
            norms = np.linalg.norm(Xs, axis=1, keepdims=True)
            Xs = np.divide(Xs, norms, out=np.zeros_like(Xs), where=norms > 0)
        return Xs

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[1]:
            raise ClassifierError(f"expected {self.weights.shape[1]} columns, got shape {X.shape}")
        return self.transform(X) @ self.weights.T + self.bias[None, :]


@numba.njit(cache=True, nogil=True)
def _pegasos(indptr, indices, data, y, n_classes, n_features, lam, order, average_from):
    """Pegasos over CSR rows whose last column is the constant bias feature.

    The iterate is kept as ``W = a * V`` so the per-step shrink is a scalar
    update, and the running sum of iterates over steps ``t > average_from``
    is ``S * V - U`` with ``U`` corrected at each sparse update; every step
    then costs O(K * nnz(row)) instead of O(K * n_features).
    """
    V = np.zeros((n_classes, n_features))
    U = np.zeros((n_classes, n_features))
    margins = np.empty(n_classes)
    a = 1.0
    S = 0.0
    n_avg = 0
    t = 0
    for i in order:
        t += 1
        lo, hi = indptr[i], indptr[i + 1]
        for k in range(n_classes):
            s = 0.0
            for p in range(lo, hi):
                s += V[k, indices[p]] * data[p]
            s *= a
            margins[k] = s if y[i] == k else -s
        a *= 1.0 - 1.0 / t
        if a == 0.0:  # first step: W is zero, restart the scale
            a = 1.0
        step = 1.0 / (lam * t) / a
        for k in range(n_classes):
            if margins[k] < 1.0:
                c = step if y[i] == k else -step
                for p in range(lo, hi):
                    j = indices[p]
                    delta = c * data[p]
                    V[k, j] += delta
                    U[k, j] += delta * S
        if t > average_from:
            n_avg += 1
            S += a
    if n_avg == 0:
        return a * V
    return (S * V - U) / n_avg


def _fit_scale(X: np.ndarray, how: str) -> np.ndarray:
    d = X.shape[1]
    if how == "none" or X.size == 0:
        return np.ones(d)
    if how == "global":
        m = float(np.abs(X).max())
        return np.full(d, m if m > 0 else 1.0)
    if how == "column":
        m = np.abs(X).max(axis=0)
        return np.where(m > 0, m, 1.0)
    raise ClassifierError(f"unknown scaling {how!r}")


def train(X: np.ndarray, y: np.ndarray, hyper: Hyper = Hyper(), n_classes: int | None = None) -> LinearModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != len(y):
        raise ClassifierError("X rows and y length differ")
    k = int(n_classes if n_classes is not None else y.max() + 1)
    if k < 2 or len(np.unique(y)) < 2:
        raise ClassifierError("training labels must contain at least two classes")
    scale = _fit_scale(X, hyper.scale)
    model = LinearModel(np.zeros((k, X.shape[1])), np.zeros(k), scale, hyper)
    Xs = sp.csr_matrix(np.hstack([model.transform(X), np.ones((X.shape[0], 1))]))
    rng = np.random.default_rng(hyper.seed)
    order = np.concatenate([rng.permutation(len(y)) for _ in range(hyper.epochs)]).astype(np.int64)
    # suffix averaging over the second half of the updates
    W = _pegasos(Xs.indptr.astype(np.int64), Xs.indices.astype(np.int64), Xs.data, y, k, Xs.shape[1],
                 float(hyper.lam), order, len(order) // 2 if hyper.average else len(order))
    model.weights = W[:, :-1].copy()
    model.bias = W[:, -1].copy()
    return model


def predict(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Argmax of class scores; ties resolve to the lowest class id."""
    return np.argmax(model.decision_function(X), axis=1)


# -- evaluation -------------------------------------------------------------


def confusion_matrix(pred, truth, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def _per_class(cm: np.ndarray):
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return precision, recall, f1


def macro_f1(pred, truth, n_classes: int) -> float:
    """Unweighted mean over all ``n_classes`` of per-class F1 (0 when P+R = 0)."""
    _, _, f1 = _per_class(confusion_matrix(pred, truth, n_classes))
    return float(f1.mean())


@dataclass
class EvalReport:
    macro_f1: float
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    class_names: list[str] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, pred, truth, n_classes: int, class_names=()) -> "EvalReport":
        cm = confusion_matrix(pred, truth, n_classes)
        p, r, f1 = _per_class(cm)
        n = cm.sum()
        return cls(float(f1.mean()), float(np.trace(cm) / n) if n else 0.0,
                   p.tolist(), r.tolist(), f1.tolist(), cm.tolist(), list(class_names))

    def to_dict(self) -> dict:
        return {"macro_f1": self.macro_f1, "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "confusion": self.confusion,
                "class_names": self.class_names}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def confusion_csv(self) -> str:
        names = self.class_names or [str(i) for i in range(len(self.confusion))]
        lines = ["truth\\pred," + ",".join(names)]
        for name, row in zip(names, self.confusion):
            lines.append(name + "," + ",".join(str(c) for c in row))
        return "\n".join(lines) + "\n"

    def save(self, json_path: str | os.PathLike, csv_path: str | os.PathLike | None = None) -> None:
        from .fileio import atomic_write_text

        atomic_write_text(json_path, self.to_json())
        if csv_path is not None:
            atomic_write_text(csv_path, self.confusion_csv())


def fit_and_report(X_train, y_train, X_test, y_test, n_classes: int, hyper: Hyper = Hyper(),
                   class_names=()) -> EvalReport:
    model = train(X_train, y_train, hyper, n_classes)
    return EvalReport.from_predictions(predict(model, X_test), y_test, n_classes, class_names)


# -- cross-validated fitness --------------------------------------------------


def stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle each class and deal its rows round-robin into ``k`` folds.

    The dealing position carries over between classes so fold sizes differ by
    at most one overall, as well as per class.
    """
    labels = np.asarray(labels)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        for pos, row in enumerate(idx):
            folds[(offset + pos) % k].append(int(row))
        offset = (offset + len(idx)) % k
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def effective_folds(labels: np.ndarray, k: int) -> int:
    if k < 2:
        raise ClassifierError("need at least 2 folds")
    smallest = int(np.bincount(labels)[np.bincount(labels) > 0].min())
    if smallest < k:
        log.info("lowering folds from %d to %d (smallest class has %d documents)", k, max(2, smallest), smallest)
        return max(2, smallest)
    return k


def cv_score(X: np.ndarray, labels: np.ndarray, n_classes: int, folds: list[np.ndarray],
             hyper: Hyper = Hyper()) -> float:
    scores = []
    n = len(labels)
    for held in folds:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        if len(np.unique(labels[mask])) < 2:
            # a single training class: every held-out row gets that class
            pred = np.full(len(held), labels[mask][0] if mask.any() else 0)
        else:
            model = train(X[mask], labels[mask], hyper, n_classes)
            pred = predict(model, X[held])
        scores.append(macro_f1(pred, labels[held], n_classes))
    return float(np.mean(scores))


class KFoldFitness:
    """Fitness of a tree: mean macro-F1 over stratified folds of the training set.

    The representation is computed once over the whole training set from the
    training statistics, and the folds are fixed at construction, so the
    fitness is a pure function of the tree.
    """

    def __init__(self, stats: TermStats, train: DocumentSet, k: int = 3, seed: int = 0,
                 hyper: Hyper | None = None):
        self.stats = stats
        self.train = train
        self.k = effective_folds(train.labels, k)
        self.folds = stratified_folds(train.labels, self.k, np.random.default_rng(seed))
        self.hyper = hyper or Hyper(seed=seed)

    def __call__(self, node: Expr) -> float:
        X = evaluate(node, self.stats, self.train)
        return cv_score(X, self.train.labels, self.train.n_classes, self.folds, self.hyper)


def kfold_fitness(node: Expr, stats: TermStats, train: DocumentSet, k: int = 3, seed: int = 0,
                  hyper: Hyper | None = None) -> float:
    return KFoldFitness(stats, train, k, seed, hyper)(node)
