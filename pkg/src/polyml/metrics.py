"""Regression, classification and clustering metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedMetricError


def _pair(y, y_pred):
    y = np.asarray(y, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y.shape != y_pred.shape:
        raise ShapeError(f"length mismatch: {y.size} vs {y_pred.size}")
    if y.size == 0:
        raise ShapeError("empty input")
    return y, y_pred


def mse(y, y_pred) -> float:
    y, y_pred = _pair(y, y_pred)
    return float(np.mean((y - y_pred) ** 2))


def rmse(y, y_pred) -> float:
    return float(np.sqrt(mse(y, y_pred)))


def nrmse_percent(y, y_pred) -> float:
    """100 * RMSE / mean(y)."""
    y, y_pred = _pair(y, y_pred)
    m = y.mean()
    if m == 0:
        raise UndefinedMetricError("nrmse undefined: mean(y) == 0")
    return float(100.0 * rmse(y, y_pred) / m)


def r2(y, y_pred) -> float:
    y, y_pred = _pair(y, y_pred)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("r2 undefined: y has zero variance")
    return float(1.0 - np.sum((y - y_pred) ** 2) / ss_tot)


@dataclass(frozen=True)
class ConfusionMatrix:
    """k x k count table; ``table[i, j]`` counts true ``labels[i]`` predicted ``labels[j]``.

    For binary {0, 1} problems the scalar fields follow the usual layout with
    label 1 as the positive class.
    """

    labels: tuple
    table: np.ndarray

    @property
    def total(self) -> int:
        return int(self.table.sum())

    def _binary_index(self):
        if len(self.labels) > 2:
            raise UndefinedMetricError("binary counts requested for a multiclass table")
        pos = self.labels.index(1) if 1 in self.labels else len(self.labels) - 1
        return pos, 1 - pos if len(self.labels) == 2 else None

    @property
    def tp(self) -> int:
        p, _ = self._binary_index()
        return int(self.table[p, p])

    @property
    def fn(self) -> int:
        p, n = self._binary_index()
        return 0 if n is None else int(self.table[p, n])

    @property
    def fp(self) -> int:
        p, n = self._binary_index()
        return 0 if n is None else int(self.table[n, p])

    @property
    def tn(self) -> int:
        p, n = self._binary_index()
        return 0 if n is None else int(self.table[n, n])

    @classmethod
    def from_counts(cls, tp, fn, fp, tn) -> "ConfusionMatrix":
        return cls((0, 1), np.array([[tn, fp], [fn, tp]], dtype=int))


def confusion(y, y_pred, labels=None) -> ConfusionMatrix:
    y = np.asarray(y).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y.shape != y_pred.shape:
        raise ShapeError(f"length mismatch: {y.size} vs {y_pred.size}")
    if labels is None:
        labels = sorted(set(y.tolist()) | set(y_pred.tolist()))
        if set(labels) <= {0, 1}:
            labels = [0, 1]
    index = {lab: i for i, lab in enumerate(labels)}
    table = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(y.tolist(), y_pred.tolist()):
        table[index[t], index[p]] += 1
    return ConfusionMatrix(tuple(labels), table)


def precision(cm: ConfusionMatrix) -> float:
    denom = cm.tp + cm.fp
    if denom == 0:
        raise UndefinedMetricError("precision undefined: no positive predictions")
    return cm.tp / denom


def recall(cm: ConfusionMatrix) -> float:
    denom = cm.tp + cm.fn
    if denom == 0:
        raise UndefinedMetricError("recall undefined: no positive examples")
    return cm.tp / denom


def f1(cm: ConfusionMatrix) -> float:
    p, r = precision(cm), recall(cm)
    if p == 0 or r == 0:
        raise UndefinedMetricError("f1 undefined: precision or recall is zero")
    return 2.0 / (1.0 / p + 1.0 / r)


def per_class_scores(y, y_pred) -> dict:
    """One-vs-rest precision/recall/f1 per class; undefined entries are None."""
    cm = confusion(y, y_pred)
    out = {}
    for i, lab in enumerate(cm.labels):
        tp = cm.table[i, i]
        fp = cm.table[:, i].sum() - tp
        fn = cm.table[i, :].sum() - tp
        ovr = ConfusionMatrix.from_counts(tp, fn, fp, cm.total - tp - fp - fn)
        scores = {}
        for name, fn_ in (("precision", precision), ("recall", recall), ("f1", f1)):
            try:
                scores[name] = fn_(ovr)
            except UndefinedMetricError:
                scores[name] = None
        out[lab] = scores
    return out


def pairwise_distances(A, B=None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = A if B is None else np.asarray(B, dtype=float)
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(sq, 0.0))


def silhouette_samples(points, labels, distance=None) -> np.ndarray:
    """Per-point (b - a) / max(a, b); singleton clusters score 0."""
    X = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise UndefinedMetricError("silhouette needs at least 2 clusters")
    if distance is None:
        # direct differences keep coincident points at exactly zero distance
        if X.shape[0] <= 1500:
            D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
        else:
            D = pairwise_distances(X)
    else:
        n = X.shape[0]
        D = np.array([[distance(X[i], X[j]) for j in range(n)] for i in range(n)])
    member = labels[:, None] == uniq[None, :]
    sizes = member.sum(0)
    sums = D @ member
    own = np.argmax(member, axis=1)
    n = X.shape[0]
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[np.arange(n), own] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own_size == 1] = 0.0
    return s


def silhouette_score(points, labels, distance=None) -> float:
    return float(np.mean(silhouette_samples(points, labels, distance)))
