import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyml.errors import ShapeError, UndefinedMetricError
from polyml.metrics import (ConfusionMatrix, confusion, f1, mse, nrmse_percent, per_class_scores,
                            precision, r2, recall, rmse, silhouette_samples, silhouette_score)


def brute_silhouette(X, labels):
    """Direct double loop over points; singleton clusters score 0."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    out = []
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            out.append(0.0)
            continue
        a = sum(math.dist(X[i], X[j]) for j in same) / len(same)
        b = math.inf
        for lab in set(labels) - {labels[i]}:
            others = [j for j in range(n) if labels[j] == lab]
            b = min(b, sum(math.dist(X[i], X[j]) for j in others) / len(others))
        out.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return float(np.mean(out))


def test_regression_hand_values():
    assert mse([1, 2], [1, 2]) == 0 and rmse([1, 2], [1, 2]) == 0 and r2([1, 2], [1, 2]) == 1
    assert mse([0, 0], [1, 1]) == 1 and rmse([0, 0], [1, 1]) == 1
    assert r2([1, 2, 3], [2, 2, 2]) == 0
    assert nrmse_percent([2, 2], [3, 3]) == pytest.approx(50.0)


def test_regression_errors():
    with pytest.raises(ShapeError):
        mse([1, 2], [1])
    with pytest.raises(UndefinedMetricError):
        nrmse_percent([1, -1], [0, 0])
    with pytest.raises(UndefinedMetricError):
        r2([3, 3], [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.integers(0, 1000))
def test_rmse_squared_is_mse_and_r2_bounded(y, seed):
    y = np.array(y)
    p = y + np.random.default_rng(seed).normal(size=y.size)
    assert rmse(y, p) ** 2 == pytest.approx(mse(y, p), rel=1e-12)
    if np.ptp(y) > 1e-6:
        assert r2(y, p) <= 1.0


def test_table_counts():
    cm = ConfusionMatrix.from_counts(tp=18, fn=2, fp=9, tn=356)
    assert precision(cm) == pytest.approx(18 / 27)
    assert recall(cm) == pytest.approx(0.9)
    assert f1(cm) == pytest.approx(2 / (27 / 18 + 20 / 18))
    assert f1(cm) == pytest.approx(0.766, abs=1e-3)
    assert cm.total == 385


def test_confusion_from_labels():
    cm = confusion([1, 0, 1, 1, 0], [1, 0, 0, 1, 1])
    assert (cm.tp, cm.fn, cm.fp, cm.tn) == (2, 1, 1, 1)
    perfect = confusion([0, 1, 1], [0, 1, 1])
    assert precision(perfect) == recall(perfect) == f1(perfect) == 1


def test_undefined_metrics_signal():
    cm = confusion([0, 0, 1], [0, 0, 0])
    with pytest.raises(UndefinedMetricError):
        precision(cm)
    with pytest.raises(UndefinedMetricError):
        recall(confusion([0, 0], [0, 1]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_symmetric_and_bounded(tp, fn, fp, tn):
    p, r = tp / (tp + fp) if tp + fp else None, tp / (tp + fn)
    cm = ConfusionMatrix.from_counts(tp, fn, fp, tn)
    swapped = ConfusionMatrix.from_counts(tp, fp, fn, tn)
    assert f1(cm) == pytest.approx(f1(swapped))
    assert f1(cm) <= min(1.0, 2 * min(p, r)) + 1e-12


def test_per_class_scores():
    s = per_class_scores(["a", "b", "c", "a"], ["a", "b", "b", "a"])
    assert s["a"]["precision"] == 1 and s["c"]["recall"] == 0 and s["c"]["precision"] is None


def test_silhouette_tight_clusters():
    X = [[0, 0], [0, 0.1], [0.1, 0], [10, 10], [10, 10.1], [10.1, 10]]
    assert silhouette_score(X, [0, 0, 0, 1, 1, 1]) > 0.9


def test_silhouette_a_zero_is_one():
    s = silhouette_samples([[0.0], [0.0], [5.0], [6.0]], [0, 0, 1, 1])
    assert s[0] == 1.0


def test_silhouette_wrong_assignment_negative():
    X = [[0.0], [0.1], [5.0], [5.1]]
    assert silhouette_score(X, [0, 1, 0, 1]) < 0


def test_silhouette_single_cluster_error():
    with pytest.raises(UndefinedMetricError):
        silhouette_score([[0.0], [1.0]], [0, 0])


@pytest.mark.parametrize("seed", range(5))
def test_silhouette_matches_brute_force(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(5, 51))
    X = g.normal(size=(n, 3))
    labels = g.integers(0, 4, size=n)
    if len(set(labels)) < 2:
        labels[0] = (labels[0] + 1) % 4
    s = silhouette_samples(X, labels)
    assert np.all((-1 <= s) & (s <= 1))
    assert abs(silhouette_score(X, labels) - brute_silhouette(X, labels.tolist())) <= 1e-12


def test_silhouette_custom_distance():
    X = [[0.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0]]
    cheb = lambda a, b: float(np.max(np.abs(a - b)))
    assert silhouette_score(X, [0, 0, 1, 1], cheb) > 0.7
