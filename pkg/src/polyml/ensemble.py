"""Bagging with out-of-bag evaluation, random forests, AdaBoost, gradient
boosting and stacking with a non-negative least-squares meta-learner.

Base learners are produced by *factories*: callables ``factory(X, y, rng)``
returning a fitted object with a ``predict(X)`` method.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .data import kfold_indices
from .errors import ConvergenceError, DataError, NotFittedError
from .numeric import as_matrix, as_vector, child_seeds, make_rng
from .trees import DecisionTree, feature_gains, fit_tree

Factory = Callable[[np.ndarray, np.ndarray, np.random.Generator], Any]


def bootstrap_sample(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``n`` row indices drawn with replacement, plus the sorted out-of-bag rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = make_rng(rng).integers(0, n, size=n)
    in_bag = np.zeros(n, dtype=bool)
    in_bag[idx] = True
    return idx, np.flatnonzero(~in_bag)


def tree_learner(**options) -> Factory:
    """Factory for CART trees with the given ``fit_tree`` options."""

    def factory(X, y, rng):
        return fit_tree(X, y, rng=rng, **options)

    return factory


@dataclass
class OobReport:
    predictions: np.ndarray
    covered: np.ndarray  # rows out-of-bag for at least one learner
    score: float  # MSE (regression) or accuracy (classification) over covered rows
    n_skipped: int


@dataclass
class EnsembleModel:
    learners: list
    kind: str
    task: str = "regression"
    aggregation: str = "mean"  # mean | majority | weighted | additive
    weights: np.ndarray | None = None
    samples: list = field(default_factory=list)  # bootstrap indices per learner
    init: float = 0.0  # F0 for gradient boosting
    learning_rate: float = 1.0
    classes: list | None = None
    n_features: int = 0
    oob: OobReport | None = None
    history: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        if not self.learners and self.kind != "gboost":
            raise NotFittedError("ensemble has no learners")
        X = as_matrix(X)
        if self.aggregation == "additive":
            return self.staged_predict(X)[-1]
        if self.aggregation == "weighted":
            if self.kind == "stacking":
                return _learner_matrix(self.learners, X) @ self.weights
            score = sum(a * h.predict(X) for a, h in zip(self.weights, self.learners))
            return np.where(score >= 0, 1, -1)
        preds = [np.asarray(h.predict(X)) for h in self.learners]
        if self.aggregation == "mean":
            return np.mean(np.asarray(preds, dtype=float), axis=0)
        return _majority(preds, self.classes)

    def staged_predict(self, X) -> list[np.ndarray]:
        """Predictions after 0, 1, ..., T boosting rounds."""
        X = as_matrix(X)
        if self.kind == "gboost":
            F = np.full(X.shape[0], self.init)
            out = [F.copy()]
            for h in self.learners:
                F = F + self.learning_rate * h.predict(X)
                out.append(F.copy())
            return out
        if self.kind == "adaboost":
            score = np.zeros(X.shape[0])
            out = [np.where(score >= 0, 1, -1)]
            for a, h in zip(self.weights, self.learners):
                score = score + a * h.predict(X)
                out.append(np.where(score >= 0, 1, -1))
            return out
        raise ValueError(f"staged predictions undefined for {self.kind!r}")


def _majority(preds, classes):
    """Column-wise vote; ties go to the earliest class in ``classes`` order."""
    preds = np.asarray(preds, dtype=object)
    classes = classes if classes is not None else sorted(set(preds.ravel().tolist()))
    votes = np.stack([(preds == c).sum(0) for c in classes])
    return np.array(classes, dtype=object)[np.argmax(votes, axis=0)]


def _task_of(y, task):
    if task is not None:
        return task
    y = np.asarray(y)
    if y.dtype.kind == "f" and not np.all(np.mod(y, 1) == 0):
        return "regression"
    return "classification" if y.dtype.kind in "OUSbi" else "regression"


def fit_bagging(X, y, base: Factory | None = None, n_estimators: int = 10, rng=None,
                bootstrap: bool = True, task: str | None = None) -> EnsembleModel:
    """Train learners independently on bootstrap samples; aggregate by mean or vote.

    ``bootstrap=False`` gives every learner the full sample (no OOB rows).
    """
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    X = as_matrix(X)
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise DataError("X and y row counts differ")
    task = _task_of(y, task)
    base = base or tree_learner(task=task)
    rng = make_rng(rng)
    seeds = child_seeds(rng, n_estimators)
    n = X.shape[0]
    learners, samples = [], []
    for s in seeds:
        r = make_rng(s)
        idx = bootstrap_sample(n, r)[0] if bootstrap else np.arange(n)
        learners.append(base(X[idx], y[idx], r))
        samples.append(idx)
    classes = sorted(set(y.tolist())) if task == "classification" else None
    model = EnsembleModel(learners, "bagging", task,
                          "mean" if task == "regression" else "majority",
                          samples=samples, classes=classes, n_features=X.shape[1])
    if bootstrap:
        model.oob = oob_score(model, X, y)
    return model


def oob_score(model: EnsembleModel, X, y) -> OobReport:
    """Aggregate each row's predictions over learners that never saw it.

    Rows that are in-bag for every learner are skipped and counted.
    """
    X = as_matrix(X)
    y = np.asarray(y)
    n = X.shape[0]
    out_of_bag = []
    for idx in model.samples:
        m = np.ones(n, dtype=bool)
        m[idx] = False
        out_of_bag.append(m)
    out_of_bag = np.array(out_of_bag)
    covered = out_of_bag.any(0)
    preds = np.array([np.asarray(h.predict(X)) for h in model.learners], dtype=object)
    result = np.empty(n, dtype=float if model.task == "regression" else object)
    for i in np.flatnonzero(covered):
        p = preds[out_of_bag[:, i], i]
        if model.task == "regression":
            result[i] = float(np.mean(p.astype(float)))
        else:
            result[i] = _majority(p[:, None], model.classes)[0]
    if model.task == "regression" and covered.any():
        score = float(np.mean((result[covered].astype(float) - y[covered].astype(float)) ** 2))
    elif covered.any():
        score = float(np.mean(result[covered] == y[covered]))
    else:
        score = float("nan")
    return OobReport(result, covered, score, int((~covered).sum()))


def fit_random_forest(X, y, n_estimators: int = 100, max_features=None, tree_options=None,
                      rng=None, bootstrap: bool = True, task: str | None = None) -> EnsembleModel:
    """Bagged, unpruned CART trees restricted to a random feature subset per split.

    ``max_features`` defaults to sqrt(p) for classification and max(1, p // 3)
    for regression.
    """
    X = as_matrix(X)
    p = X.shape[1]
    task = _task_of(y, task)
    if max_features is None:
        max_features = max(1, int(np.sqrt(p))) if task == "classification" else max(1, p // 3)
    if not 1 <= max_features <= p:
        raise ValueError("max_features must be in [1, n_features]")
    opts = dict(tree_options or {})
    opts.update(task=task, max_features=max_features)
    model = fit_bagging(X, y, tree_learner(**opts), n_estimators, rng, bootstrap, task)
    model.kind = "forest"
    return model


@dataclass
class FeatureImportance:
    names: list[str]
    scores: np.ndarray

    def ranking(self) -> list[str]:
        return [self.names[i] for i in np.argsort(-self.scores, kind="stable")]

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.scores.tolist()))


def mdi_importance(model, feature_names=None) -> FeatureImportance:
    """Mean decrease in impurity summed over every split of every tree, normalized."""
    trees = [model] if isinstance(model, DecisionTree) else getattr(model, "learners", None)
    if not trees:
        raise NotFittedError("model has no fitted trees")
    if not all(isinstance(t, DecisionTree) for t in trees):
        raise TypeError("MDI needs tree learners")
    total = np.sum([feature_gains(t) for t in trees], axis=0)
    n = total.size
    scores = total / total.sum() if total.sum() > 0 else np.full(n, 1.0 / n)
    names = list(feature_names) if feature_names is not None else trees[0].feature_names
    return FeatureImportance(names, scores)


# --- AdaBoost ------------------------------------------------------------------


@dataclass
class Stump:
    """``polarity`` if x[feature] >= threshold else ``-polarity``."""

    feature: int
    threshold: float
    polarity: int

    def predict(self, X) -> np.ndarray:
        X = as_matrix(X)
        return np.where(X[:, self.feature] >= self.threshold, self.polarity, -self.polarity)


def fit_stump(X, y, w) -> tuple[Stump, float]:
    """Weighted-error-minimising decision stump (ties: first feature, lowest threshold)."""
    X = as_matrix(X)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys, ws = X[order, j], y[order], w[order]
        # error of "+1 at/above threshold" with the first k sorted points below it
        pos_w = np.concatenate([[0.0], np.cumsum(ws * (ys > 0))])  # positives below -> wrong
        neg_w = np.concatenate([[0.0], np.cumsum(ws * (ys < 0))])
        err_plus = pos_w + (neg_w[-1] - neg_w)
        cuts = np.concatenate([[True], xs[1:] > xs[:-1], [True]])
        thr = np.concatenate([[xs[0] - 1.0], (xs[:-1] + xs[1:]) / 2.0, [xs[-1] + 1.0]])
        for pol, err in ((1, err_plus), (-1, 1.0 - err_plus)):
            e = np.where(cuts, err, np.inf)
            k = int(np.argmin(e))
            if best is None or e[k] < best[0] - 1e-12:
                best = (float(e[k]), Stump(j, float(thr[k]), pol))
    return best[1], best[0]


def fit_adaboost(X, y, n_estimators: int = 50, rng=None) -> EnsembleModel:
    """Discrete AdaBoost over decision stumps; labels in {-1, +1}.

    Stops early when a stump is perfect (it then dominates with a large finite
    weight) or when its weighted error reaches 0.5.
    """
    X = as_matrix(X)
    y = as_vector(y)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be in {-1, +1}")
    make_rng(rng)  # stumps are deterministic; accepted for a uniform signature
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    learners, alphas, history = [], [], [w.copy()]
    for _ in range(n_estimators):
        stump, err = fit_stump(X, y, w)
        if err >= 0.5:
            break
        eps = min(max(err, 1e-10), 1 - 1e-10)
        alpha = 0.5 * np.log((1 - eps) / eps)
        learners.append(stump)
        alphas.append(alpha)
        w = w * np.exp(-alpha * y * stump.predict(X))
        w /= w.sum()
        history.append(w.copy())
        if err <= 0:
            break
    model = EnsembleModel(learners, "adaboost", "classification", "weighted",
                          weights=np.array(alphas), classes=[-1, 1], n_features=X.shape[1])
    model.history = history
    return model


# --- gradient boosting ---------------------------------------------------------


def _shrink_leaves(node, lam):
    if node.is_leaf:
        node.prediction = node.prediction * node.n_samples / (node.n_samples + lam)
        return
    for c in node.children():
        _shrink_leaves(c, lam)


def fit_gradient_boosting(X, y, n_estimators: int = 100, learning_rate: float = 0.1,
                          tree_options=None, leaf_l2: float = 0.0, max_features=None,
                          rng=None) -> EnsembleModel:
    """Squared-error gradient boosting: F0 = mean(y), each tree fits the residuals.

    ``leaf_l2`` shrinks leaf values to sum / (n + lambda); ``max_features``
    enables per-split feature subsampling.
    """
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must be in (0, 1]")
    if n_estimators < 0:
        raise ValueError("n_estimators must be >= 0")
    X = as_matrix(X)
    y = as_vector(y)
    opts = dict(tree_options or {"max_depth": 3})
    opts.update(task="regression", max_features=max_features)
    rng = make_rng(rng)
    F = np.full(y.shape, float(y.mean()))
    learners, history = [], [float(np.mean((y - F) ** 2))]
    for s in child_seeds(rng, n_estimators):
        tree = fit_tree(X, y - F, rng=s, **opts)
        if leaf_l2 > 0:
            _shrink_leaves(tree.root, leaf_l2)
        learners.append(tree)
        F = F + learning_rate * tree.predict(X)
        history.append(float(np.mean((y - F) ** 2)))
    return EnsembleModel(learners, "gboost", "regression", "additive", init=float(y.mean()),
                         learning_rate=learning_rate, n_features=X.shape[1], history=history)


# --- stacking ------------------------------------------------------------------


def nnls(A, b, max_iter: int | None = None) -> np.ndarray:
    """Lawson-Hanson active-set solution of min ||Ax - b|| subject to x >= 0."""
    A = as_matrix(A)
    b = as_vector(b)
    m, n = A.shape
    max_iter = max_iter or 3 * n + 10
    tol = 10 * np.finfo(float).eps * np.abs(A).sum(0).max() * max(m, n)
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol:
        it += 1
        if it > max_iter:
            raise ConvergenceError("nnls exceeded its iteration budget", gap=float(w.max()))
        passive[int(np.argmax(np.where(passive, -np.inf, w)))] = True
        while True:
            s = np.zeros(n)
            s[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if s[passive].min() > 0:
                break
            neg = passive & (s <= 0)
            alpha = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
        x = s
        w = A.T @ (b - A @ x)
    return x


def _learner_matrix(learners, X):
    return np.column_stack([np.asarray(h.predict(X), dtype=float) for h in learners])


def fit_stacking(factories: list[Factory], X, y, k_folds: int = 5, rng=None) -> EnsembleModel:
    """Out-of-fold first-level predictions, NNLS meta-weights (no intercept),
    then every first-level learner refit on the full data."""
    if len(factories) < 2:
        raise ValueError("stacking needs at least 2 first-level learners")
    X = as_matrix(X)
    y = as_vector(y)
    rng = make_rng(rng)
    folds = kfold_indices(X.shape[0], k_folds, rng)
    seeds = child_seeds(rng, len(factories))
    Z = np.zeros((X.shape[0], len(factories)))
    for f in folds:
        train = np.setdiff1d(np.arange(X.shape[0]), f)
        for j, (fac, s) in enumerate(zip(factories, seeds)):
            Z[f, j] = fac(X[train], y[train], make_rng(s)).predict(X[f])
    coef = nnls(Z, y)
    learners = [fac(X, y, make_rng(s)) for fac, s in zip(factories, seeds)]
    model = EnsembleModel(learners, "stacking", "regression", "weighted", weights=coef,
                          n_features=X.shape[1])
    model.history = [Z]
    return model
