"""Decision trees: ID3, C4.5 and CART for classification and regression.

Conventions:

* numeric splits send ``x < threshold`` to the left child; thresholds are
  midpoints between consecutive distinct sorted values;
* ties between equally good splits go to the first attribute in column order;
* ``gain_ratio`` divides the information gain by the parent entropy (not by
  the split information used by classical C4.5), which is the definition the
  worked weather example is built on.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .data import NUMERIC, Dataset
from .errors import DataError
from .numeric import make_rng

CLASSIFICATION_CRITERIA = ("entropy", "gain_ratio", "gini")
REGRESSION_CRITERIA = ("variance",)
_TIE_TOL = 1e-12


def entropy(class_counts) -> float:
    c = np.asarray(class_counts, dtype=float)
    total = c.sum()
    if total <= 0:
        raise ValueError("entropy of an empty count vector")
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum())


def gini(class_counts) -> float:
    c = np.asarray(class_counts, dtype=float)
    total = c.sum()
    if total <= 0:
        raise ValueError("gini of an empty count vector")
    p = c / total
    return float(1.0 - (p**2).sum())


def _entropy_rows(counts):
    """Entropy along the last axis for arrays of counts (0 where empty)."""
    tot = counts.sum(-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tot > 0, counts / np.where(tot > 0, tot, 1), 0.0)
        logp = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logp).sum(-1)


def _gini_rows(counts):
    tot = counts.sum(-1, keepdims=True)
    p = np.where(tot > 0, counts / np.where(tot > 0, tot, 1), 0.0)
    return 1.0 - (p**2).sum(-1)


@dataclass
class TreeNode:
    """Internal node or leaf. Every node keeps the prediction of its own
    training subset so traversal can fall back to it."""

    prediction: Any
    n_samples: int
    impurity: float
    value: np.ndarray | None = None  # class counts (classification)
    feature: int | None = None
    name: str | None = None
    threshold: float | None = None  # numeric binary split
    category: Any = None  # CART categorical split: x == category goes left
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    branches: dict | None = None  # multiway categorical split
    gain: float = 0.0  # n_samples * impurity decrease of this split

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def children(self) -> list["TreeNode"]:
        if self.is_leaf:
            return []
        if self.branches is not None:
            return list(self.branches.values())
        return [self.left, self.right]

    def make_leaf(self) -> None:
        self.feature = self.name = self.threshold = self.category = None
        self.left = self.right = self.branches = None
        self.gain = 0.0


@dataclass
class DecisionTree:
    root: TreeNode
    feature_names: list[str]
    categorical: list[bool]
    task: str
    classes: list | None = None
    algorithm: str = "cart"
    criterion: str = "gini"
    _flat: Any = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def node_count(self) -> int:
        return _count(self.root)

    def depth(self) -> int:
        return _depth(self.root)

    def predict(self, X) -> np.ndarray:
        if isinstance(X, Dataset):
            X = X.X(self.feature_names)
        X = np.asarray(X, dtype=object if any(self.categorical) else float)
        if X.ndim == 1:
            X = X[None, :]
        if not any(self.categorical):
            return self._predict_flat(X.astype(float))
        out = [predict(self, X[i]) for i in range(X.shape[0])]
        return np.array(out, dtype=float if self.task == "regression" else object)

    def _predict_flat(self, X):
        if self._flat is None:
            self._flat = _flatten(self.root)
        feat, thr, left, right, leaf_value = self._flat
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = feat[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, feat[nd]] < thr[nd]
            node[r] = np.where(go_left, left[nd], right[nd])
            active = feat[node] >= 0
        vals = leaf_value[node]
        if self.task == "classification":
            return np.array(self.classes, dtype=object)[vals.astype(int)]
        return vals


def _count(node):
    return 1 + sum(_count(c) for c in node.children())


def _depth(node):
    kids = node.children()
    return 0 if not kids else 1 + max(_depth(c) for c in kids)


def _flatten(root):
    feat, thr, left, right, val = [], [], [], [], []

    def visit(node, classes_index=None):
        i = len(feat)
        feat.append(-1 if node.is_leaf else node.feature)
        thr.append(0.0 if node.is_leaf else node.threshold)
        left.append(-1)
        right.append(-1)
        val.append(node.prediction if node.value is None else int(np.argmax(node.value)))
        if not node.is_leaf:
            left[i] = visit(node.left)
            right[i] = visit(node.right)
        return i

    visit(root)
    return (np.array(feat), np.array(thr, dtype=float), np.array(left), np.array(right),
            np.array(val, dtype=float))


# --- fitting --------------------------------------------------------------


def _infer_task(y, criterion):
    if criterion in REGRESSION_CRITERIA:
        return "regression"
    if criterion in CLASSIFICATION_CRITERIA:
        return "classification"
    y = np.asarray(y)
    if y.dtype.kind == "f" and not np.all(np.mod(y, 1) == 0):
        return "regression"
    return "classification"


class _Grower:
    def __init__(self, columns, categorical, y, task, criterion, algorithm, max_depth,
                 min_samples_split, min_samples_leaf, max_features, rng, value_order):
        self.columns = columns
        self.categorical = categorical
        self.task = task
        self.criterion = criterion
        self.algorithm = algorithm
        self.max_depth = max_depth
        self.min_split = max(2, min_samples_split)
        self.min_leaf = max(1, min_samples_leaf)
        self.max_features = max_features
        self.rng = rng
        self.value_order = value_order
        self.numeric_idx = [j for j, c in enumerate(categorical) if not c]
        if self.numeric_idx:
            self.Xn = np.column_stack([columns[j] for j in self.numeric_idx]).astype(float)
        if task == "classification":
            self.classes = sorted(set(np.asarray(y).tolist()), key=_sort_key)
            index = {c: i for i, c in enumerate(self.classes)}
            self.codes = np.array([index[v] for v in np.asarray(y).tolist()], dtype=int)
            self.Y = np.eye(len(self.classes))[self.codes]
        else:
            self.classes = None
            self.y = np.asarray(y, dtype=float)

    # impurity of a node given its rows
    def _stats(self, idx):
        if self.task == "classification":
            counts = self.Y[idx].sum(0)
            imp = gini(counts) if self.criterion == "gini" else entropy(counts)
            pred = self.classes[int(np.argmax(counts))]
            return pred, imp, counts
        yy = self.y[idx]
        return float(yy.mean()), float(yy.var()), None

    def _imp_rows(self, counts):
        return _gini_rows(counts) if self.criterion == "gini" else _entropy_rows(counts)

    def grow(self, idx, depth=0, used=frozenset()):
        pred, imp, counts = self._stats(idx)
        node = TreeNode(pred, int(idx.size), imp, counts)
        if (idx.size < self.min_split or imp <= 1e-15
                or (self.max_depth is not None and depth >= self.max_depth)):
            return node
        cand = [j for j in range(len(self.columns))
                if not (self.categorical[j] and self.algorithm != "cart" and j in used)]
        if self.max_features is not None and self.max_features < len(cand):
            cand = sorted(self.rng.choice(cand, size=self.max_features, replace=False).tolist())
        if not cand:
            return node
        best = self._best_split(idx, imp, cand)
        if best is None:
            return node
        score, j, kind, arg, parts = best
        node.feature = j
        node.name = None
        node.gain = float(idx.size * score)
        if kind == "threshold":
            node.threshold = float(arg)
            node.left = self.grow(parts[0], depth + 1, used)
            node.right = self.grow(parts[1], depth + 1, used)
        elif kind == "category":
            node.category = arg
            node.left = self.grow(parts[0], depth + 1, used)
            node.right = self.grow(parts[1], depth + 1, used)
        else:
            node.branches = {v: self.grow(p, depth + 1, used | {j}) for v, p in zip(arg, parts)}
        return node

    def _best_split(self, idx, parent_imp, cand):
        results = {}
        num = [j for j in cand if not self.categorical[j]]
        if num:
            results.update(self._numeric_splits(idx, parent_imp, num))
        for j in cand:
            if self.categorical[j]:
                r = self._categorical_split(idx, parent_imp, j)
                if r is not None:
                    results[j] = r
        if not results:
            return None
        top = max(r[0] for r in results.values())
        j = min(k for k, r in results.items() if r[0] >= top - _TIE_TOL)
        score, kind, arg, parts = results[j]
        if score < -1e-12:
            return None
        return score, j, kind, arg, parts

    def _numeric_splits(self, idx, parent_imp, feats):
        cols = [self.numeric_idx.index(j) for j in feats]
        X = self.Xn[np.ix_(idx, cols)]
        m = idx.size
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, 0)
        nl = np.arange(1, m)[:, None].astype(float)
        nr = m - nl
        if self.task == "regression":
            yy = self.y[idx]
            ys = (yy - yy.mean())[order]
            cs = np.cumsum(ys, 0)
            cs2 = np.cumsum(ys**2, 0)
            tot, tot2 = cs[-1], cs2[-1]
            sse_l = cs2[:-1] - cs[:-1] ** 2 / nl
            sse_r = (tot2 - cs2[:-1]) - (tot - cs[:-1]) ** 2 / nr
            child = (sse_l + sse_r) / m
        else:
            Ys = self.Y[idx][order]  # m x f x k
            cs = np.cumsum(Ys, 0)
            left = cs[:-1]
            right = cs[-1][None] - left
            child = (nl * self._imp_rows(left) + nr * self._imp_rows(right)) / m
        score = parent_imp - child
        if self.criterion == "gain_ratio":
            score = score / parent_imp
        valid = (xs[1:] > xs[:-1]) & (nl >= self.min_leaf) & (nr >= self.min_leaf)
        score = np.where(valid, score, -np.inf)
        out = {}
        for c, j in enumerate(feats):
            if not valid[:, c].any():
                continue
            top = score[:, c].max()
            pos = int(np.flatnonzero(score[:, c] >= top - _TIE_TOL)[0])
            lo, hi = xs[pos, c], xs[pos + 1, c]
            thr = (lo + hi) / 2.0
            if not lo < thr:
                thr = hi
            rows = idx[order[:, c]]
            out[j] = (float(top), "threshold", thr, (np.sort(rows[: pos + 1]), np.sort(rows[pos + 1 :])))
        return out

    def _categorical_split(self, idx, parent_imp, j):
        col = self.columns[j][idx]
        values = [v for v in self.value_order[j] if np.any(col == v)]
        if len(values) < 2:
            return None
        parts = [idx[col == v] for v in values]
        if self.algorithm == "cart":
            best = None
            for v, p in zip(values, parts):
                rest = idx[col != v]
                if p.size < self.min_leaf or rest.size < self.min_leaf:
                    continue
                s = self._score_parts(idx.size, parent_imp, [p, rest])
                if best is None or s > best[0] + _TIE_TOL:
                    best = (s, "category", v, (p, rest))
                if len(values) == 2:
                    break
            return best
        if any(p.size < self.min_leaf for p in parts):
            return None
        return (self._score_parts(idx.size, parent_imp, parts), "multiway", values, parts)

    def _score_parts(self, n, parent_imp, parts):
        child = sum(p.size / n * self._stats(p)[1] for p in parts)
        score = parent_imp - child
        if self.criterion == "gain_ratio":
            score /= parent_imp
        return float(score)


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float, np.integer, np.floating)) else (1, 0, str(v))


def _first_appearance(col):
    seen = {}
    for v in col.tolist():
        if v not in seen:
            seen[v] = None
    return list(seen)


def fit_tree(data, y=None, *, criterion=None, algorithm="cart", max_depth=None,
             min_samples_split=2, min_samples_leaf=1, max_features=None,
             feature_names=None, categorical=None, task=None, rng=None) -> DecisionTree:
    """Grow a decision tree.

    ``data`` is either a labelled :class:`Dataset` or a feature matrix with
    ``y`` given separately. ``algorithm`` is ``"id3"`` (categorical only,
    multiway), ``"c45"`` (multiway categorical + numeric thresholds) or
    ``"cart"`` (binary splits only).
    """
    if algorithm not in ("id3", "c45", "cart"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if isinstance(data, Dataset):
        names = data.feature_names
        categorical = [data.kinds[c] != NUMERIC for c in names]
        columns = [data.values[c] for c in names]
        y = data.y()
        if task is None and criterion is None:
            task = "regression" if data.kinds[data.label] == NUMERIC and algorithm == "cart" and _infer_task(y, None) == "regression" else "classification"
    else:
        X = np.asarray(data)
        if X.ndim == 1:
            X = X[:, None]
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        if categorical is None:
            categorical = [X.dtype == object and not _numeric_column(X[:, j]) for j in range(X.shape[1])]
        columns = [X[:, j] if categorical[j] else X[:, j].astype(float) for j in range(X.shape[1])]
    if y is None:
        raise DataError("labels required")
    y = np.asarray(y)
    if len(y) == 0:
        raise DataError("cannot fit a tree on an empty dataset")
    task = task or _infer_task(y, criterion)
    if criterion is None:
        criterion = {"id3": "entropy", "c45": "gain_ratio"}.get(algorithm, "gini")
        if task == "regression":
            criterion = "variance"
    if task == "regression" and criterion not in REGRESSION_CRITERIA:
        raise DataError(f"criterion {criterion!r} is for classification")
    if task == "classification" and criterion not in CLASSIFICATION_CRITERIA:
        raise DataError(f"criterion {criterion!r} is for regression")
    if algorithm == "id3" and not all(categorical):
        raise DataError("ID3 handles categorical attributes only")
    if task == "regression":
        try:
            y = y.astype(float)
        except (TypeError, ValueError):
            raise DataError("regression target must be numeric") from None
    if isinstance(max_features, float):
        max_features = max(1, int(round(max_features * len(names))))
    elif max_features == "sqrt":
        max_features = max(1, int(np.sqrt(len(names))))
    if max_features is not None and not 1 <= max_features <= len(names):
        raise ValueError("max_features must be in [1, n_features]")
    grower = _Grower(
        columns, list(categorical), y, task, criterion, algorithm, max_depth,
        min_samples_split, min_samples_leaf, max_features, make_rng(rng),
        [(_first_appearance(c) if cat else None) for c, cat in zip(columns, categorical)],
    )
    root = grower.grow(np.arange(len(y)))
    _name_nodes(root, names)
    return DecisionTree(root, list(names), list(map(bool, categorical)), task,
                        grower.classes, algorithm, criterion)


def _numeric_column(col):
    try:
        np.asarray(col, dtype=float)
        return True
    except (TypeError, ValueError):
        return False


def _name_nodes(node, names):
    if not node.is_leaf:
        node.name = names[node.feature]
        for c in node.children():
            _name_nodes(c, names)


# --- prediction -----------------------------------------------------------


def _row_value(row, node):
    if isinstance(row, dict):
        if node.name not in row:
            raise KeyError(f"row is missing attribute {node.name!r}")
        return row[node.name]
    if node.feature >= len(row):
        raise KeyError(f"row is missing attribute {node.name!r}")
    return row[node.feature]


def _step(node, v):
    """Child for attribute value ``v``; None when the value was never seen."""
    if node.branches is not None:
        return node.branches.get(v)
    if node.category is not None:
        return node.left if v == node.category else node.right
    return node.left if float(v) < node.threshold else node.right


def predict(tree: DecisionTree, row):
    """Prediction for a single row (mapping by attribute name, or a sequence)."""
    node = tree.root
    while not node.is_leaf:
        nxt = _step(node, _row_value(row, node))
        if nxt is None:
            return node.prediction
        node = nxt
    return node.prediction


# --- information measures on datasets --------------------------------------


def _label_counts(labels, classes):
    labels = np.asarray(labels).tolist()
    return np.array([labels.count(c) for c in classes], dtype=float)


def information_gain(data: Dataset, attribute: str) -> float:
    """Parent entropy minus the size-weighted entropy of the children.

    Numeric attributes are evaluated at their best midpoint threshold.
    """
    if attribute not in data.feature_names:
        raise KeyError(f"unknown attribute {attribute!r}")
    y = data.y()
    classes = sorted(set(np.asarray(y).tolist()), key=_sort_key)
    parent = entropy(_label_counts(y, classes))
    col = data.values[attribute]
    n = len(y)
    if data.kinds[attribute] != NUMERIC:
        child = 0.0
        for v in _first_appearance(col):
            m = col == v
            child += m.sum() / n * entropy(_label_counts(y[m], classes))
        return float(parent - child)
    best = 0.0
    xs = np.unique(col)
    for lo, hi in zip(xs[:-1], xs[1:]):
        m = col < (lo + hi) / 2
        child = (m.sum() / n * entropy(_label_counts(y[m], classes))
                 + (~m).sum() / n * entropy(_label_counts(y[~m], classes)))
        best = max(best, parent - child)
    return float(best)


def gain_ratio(data: Dataset, attribute: str) -> float:
    """Information gain divided by the parent entropy."""
    y = data.y()
    classes = sorted(set(np.asarray(y).tolist()), key=_sort_key)
    parent = entropy(_label_counts(y, classes))
    if parent == 0:
        return 0.0
    return information_gain(data, attribute) / parent


# --- pruning --------------------------------------------------------------


def _loss(tree, pred, y_true):
    if tree.task == "classification":
        return float(sum(p != t for p, t in zip([pred] * len(y_true), y_true)))
    return float(np.sum((np.asarray(y_true, dtype=float) - pred) ** 2))


def prune(tree: DecisionTree, X_val, y_val=None) -> DecisionTree:
    """Reduced-error pruning.

    Bottom-up, any node whose children are all leaves is collapsed to a leaf
    predicting its own training majority (mean) whenever that does not
    increase the validation error on the rows reaching it.
    """
    if isinstance(X_val, Dataset):
        y_val = X_val.y()
        X_val = X_val.X(tree.feature_names)
    X_val = np.asarray(X_val, dtype=object)
    y_val = np.asarray(y_val).tolist()
    if len(y_val) == 0:
        raise DataError("validation set is empty")
    pruned = copy.deepcopy(tree)
    pruned._flat = None

    def visit(node, rows):
        if node.is_leaf:
            return _loss(pruned, node.prediction, [y_val[i] for i in rows])
        routed = {id(c): [] for c in node.children()}
        stay = []
        for i in rows:
            c = _step(node, _row_value(X_val[i], node))
            (stay if c is None else routed[id(c)]).append(i)
        subtree_loss = _loss(pruned, node.prediction, [y_val[i] for i in stay])
        for c in node.children():
            subtree_loss += visit(c, routed[id(c)])
        if all(c.is_leaf for c in node.children()):
            collapsed = _loss(pruned, node.prediction, [y_val[i] for i in rows])
            if collapsed <= subtree_loss:
                node.make_leaf()
                return collapsed
        return subtree_loss

    visit(pruned.root, list(range(len(y_val))))
    return pruned


def accuracy(tree: DecisionTree, X, y) -> float:
    pred = tree.predict(X)
    return float(np.mean([p == t for p, t in zip(pred.tolist(), np.asarray(y).tolist())]))


# --- rendering ------------------------------------------------------------


def render(tree: DecisionTree, indent: str = "  ") -> str:
    """Indented text rendering: attribute, then each branch value and its subtree."""
    lines = []

    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    def visit(node, depth):
        pad = indent * depth
        if node.is_leaf:
            lines.append(f"{pad}-> {fmt(node.prediction)}")
            return
        lines.append(f"{pad}{node.name}")
        if node.branches is not None:
            items = [(f"= {v}", c) for v, c in node.branches.items()]
        elif node.category is not None:
            items = [(f"= {node.category}", node.left), (f"!= {node.category}", node.right)]
        else:
            items = [(f"< {fmt(node.threshold)}", node.left), (f">= {fmt(node.threshold)}", node.right)]
        for label, child in items:
            if child.is_leaf:
                lines.append(f"{pad}{indent}{label}: {fmt(child.prediction)}")
            else:
                lines.append(f"{pad}{indent}{label}")
                visit(child, depth + 2)

    visit(tree.root, 0)
    return "\n".join(lines)


def tree_structure(node: TreeNode):
    """Nested plain-python view ``(attribute, {value: subtree | leaf})`` for comparisons."""
    if node.is_leaf:
        return node.prediction
    if node.branches is not None:
        return (node.name, {v: tree_structure(c) for v, c in node.branches.items()})
    key = node.category if node.category is not None else node.threshold
    return (node.name, key, tree_structure(node.left), tree_structure(node.right))


def feature_gains(tree: DecisionTree) -> np.ndarray:
    """Per-feature sum of ``n_node * impurity decrease`` over the tree's splits."""
    out = np.zeros(tree.n_features)

    def visit(node):
        if not node.is_leaf:
            out[node.feature] += node.gain
            for c in node.children():
                visit(c)

    visit(tree.root)
    return out
