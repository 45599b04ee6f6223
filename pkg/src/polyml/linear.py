"""Ordinary, ridge, lasso, polynomial and logistic regression."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError, ShapeError
from .numeric import as_matrix, as_vector, pseudoinverse


@dataclass
class LinearModel:
    """``y = X @ weights + bias``; for logistic models the same affine score feeds a sigmoid."""

    weights: np.ndarray
    bias: float
    kind: str = "linear"
    history: list = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        """Parameter vector with the bias first: (a0, a1, ..., an)."""
        return np.concatenate([[self.bias], self.weights])

    def decision_function(self, X) -> np.ndarray:
        return as_matrix(X) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        if self.kind == "logistic":
            return predict_class(self, X)
        return self.decision_function(X)


def _xy(X, y):
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    if X.shape[0] == 0:
        raise DataError("empty input")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    return X, y


def augment(X) -> np.ndarray:
    """Prepend the constant x0 = 1 column."""
    X = as_matrix(X)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def fit_ols(X, y) -> LinearModel:
    """Normal-equation solution via the pseudoinverse (minimum norm if rank deficient)."""
    X, y = _xy(X, y)
    a = pseudoinverse(augment(X)) @ y
    return LinearModel(a[1:], float(a[0]))


def fit_ridge(X, y, alpha: float) -> LinearModel:
    """(X'X + alpha I0)^-1 X'y with I0 the identity zeroed at the bias entry."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    X, y = _xy(X, y)
    Xa = augment(X)
    I0 = np.eye(Xa.shape[1])
    I0[0, 0] = 0.0
    a = pseudoinverse(Xa.T @ Xa + alpha * I0) @ (Xa.T @ y)
    return LinearModel(a[1:], float(a[0]))


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def fit_lasso(X, y, alpha: float, max_iter: int = 10_000, tol: float = 1e-10) -> LinearModel:
    """Minimise ||Xa - y||^2 + alpha * sum|a_i| (bias free) by cyclic coordinate descent.

    Features are expected to be standardized by the caller. The bias is
    handled by centering, which is exact because it is not penalized.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    X, y = _xy(X, y)
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc, yc = X - x_mean, y - y_mean
    col_sq = (Xc**2).sum(axis=0)
    w = np.zeros(X.shape[1])
    r = yc.copy()
    max_change = np.inf
    for _ in range(max_iter):
        max_change = 0.0
        for j in range(X.shape[1]):
            if col_sq[j] == 0:
                continue
            old = w[j]
            rho = Xc[:, j] @ r + col_sq[j] * old
            w[j] = soft_threshold(rho, alpha / 2.0) / col_sq[j]
            if w[j] != old:
                r -= Xc[:, j] * (w[j] - old)
                max_change = max(max_change, abs(w[j] - old))
        if max_change < tol:
            break
    else:
        raise ConvergenceError(
            f"lasso did not converge in {max_iter} sweeps (max coordinate change {max_change:.3g})",
            gap=max_change,
        )
    return LinearModel(w, float(y_mean - x_mean @ w))


def polynomial_features(X, degree: int) -> np.ndarray:
    """Per-feature powers x, x^2, ..., x^degree (no cross terms), grouped by feature."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    X = as_matrix(X)
    return np.hstack([X[:, [j]] ** np.arange(1, degree + 1) for j in range(X.shape[1])])


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(params, X, y) -> float:
    """Average cross-entropy; ``params`` is (a0, a1, ..., an)."""
    z = augment(X) @ params
    # log(p) = -log(1+e^-z), log(1-p) = -log(1+e^z)
    return float(np.mean(y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z)))


def logistic_gradient(params, X, y) -> np.ndarray:
    Xa = augment(X)
    return Xa.T @ (sigmoid(Xa @ params) - y) / Xa.shape[0]


def fit_logistic(X, y, lr: float = 0.1, epochs: int = 1000, init=None) -> LinearModel:
    """Full-batch gradient descent on the average cross-entropy."""
    X, y = _xy(X, y)
    if lr <= 0:
        raise ValueError("lr must be > 0")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("logistic regression needs labels in {0, 1}")
    a = np.zeros(X.shape[1] + 1) if init is None else np.array(init, dtype=float)
    history = [logistic_loss(a, X, y)]
    for _ in range(epochs):
        a = a - lr * logistic_gradient(a, X, y)
        history.append(logistic_loss(a, X, y))
    return LinearModel(a[1:], float(a[0]), kind="logistic", history=history)


def predict_proba(model: LinearModel, X) -> np.ndarray:
    return sigmoid(model.decision_function(X))


def predict_class(model: LinearModel, X) -> np.ndarray:
    return (predict_proba(model, X) >= 0.5).astype(int)
