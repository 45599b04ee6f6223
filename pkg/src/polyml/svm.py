"""Kernels, soft-margin SVM classification (primal and dual) and linear SVR.

Decision functions follow the ``w'x - b`` sign convention throughout.

Two primal objectives are exposed because the soft-margin formulations in
circulation put C on different terms:

* ``"A"``: ``C ||w||^2 + (1/D) sum hinge(y (w'x - b))`` (C weights the margin term)
* ``"B"``: ``1/2 ||w||^2 + C sum hinge(y (w'x - b))`` (C weights the violations)

so increasing C widens the margin under "A" and narrows it under "B".
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError, ShapeError
from .numeric import as_matrix, as_vector, make_rng


@dataclass(frozen=True)
class Kernel:
    kind: str = "linear"
    gamma: float = 1.0
    coef0: float = 0.0
    degree: int = 3

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be > 0")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("polynomial degree must be an integer >= 1")


def kernel_matrix(k: Kernel, A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"kernel dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if k.kind == "linear":
        return A @ B.T
    if k.kind == "polynomial":
        return (k.gamma * (A @ B.T) + k.coef0) ** int(k.degree)
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    K = np.exp(-k.gamma * np.maximum(sq, 0.0))
    if A is B or (A.shape == B.shape and np.array_equal(A, B)):
        np.fill_diagonal(K, 1.0)
    return K


def kernel_eval(k: Kernel, a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"kernel dimension mismatch: {a.size} vs {b.size}")
    if k.kind == "linear":
        return float(a @ b)
    if k.kind == "polynomial":
        return float((k.gamma * (a @ b) + k.coef0) ** int(k.degree))
    return float(np.exp(-k.gamma * np.sum((a - b) ** 2)))


def poly2_feature_map(x) -> np.ndarray:
    """Explicit map (x1^2, sqrt(2) x1 x2, x2^2) whose inner product is (a'b)^2."""
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 0] ** 2, np.sqrt(2.0) * x[..., 0] * x[..., 1], x[..., 1] ** 2], axis=-1)


def hinge_loss(z):
    return np.maximum(0.0, 1.0 - np.asarray(z, dtype=float))


def hinge_subgradient(z):
    """d/dz max(0, 1 - z); the kink at z = 1 uses 0."""
    return np.where(np.asarray(z, dtype=float) < 1.0, -1.0, 0.0)


@dataclass
class SvmModel:
    C: float
    b: float
    w: np.ndarray | None = None
    kernel: Kernel | None = None
    support_vectors: np.ndarray | None = None
    dual_coef: np.ndarray | None = None  # alpha_i * y_i for stored support vectors
    alphas: np.ndarray | None = None  # full alpha vector over training rows
    objective: str = "A"
    history: list = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = as_matrix(X)
        if self.w is not None:
            return X @ self.w - self.b
        return kernel_matrix(self.kernel, X, self.support_vectors) @ self.dual_coef - self.b

    def predict(self, X) -> np.ndarray:
        if self.objective == "svr":
            return self.decision_function(X)
        return np.where(self.decision_function(X) >= 0, 1, -1)


def _check_pm1(y):
    y = as_vector(y)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be in {-1, +1}")
    return y


def primal_objective(w, b, X, y, C, objective="A") -> float:
    h = hinge_loss(y * (X @ w - b))
    if objective == "A":
        return float(C * (w @ w) + h.mean())
    return float(0.5 * (w @ w) + C * h.sum())


def _primal_subgradient(w, b, X, y, C, objective):
    active = (y * (X @ w - b) < 1.0).astype(float)  # hinge subgradient 0 at the kink
    coef = -active * y
    if objective == "A":
        gw = 2.0 * C * w + X.T @ coef / len(y)
        gb = -coef.mean()
    else:
        gw = w + C * (X.T @ coef)
        gb = -C * coef.sum()
    return gw, gb


def _descend(objective_fn, grad_fn, w, b, epochs, lr, decay):
    """Subgradient descent with a decaying step that is halved whenever a step
    would raise the objective, so the recorded objective never increases."""
    f = objective_fn(w, b)
    history = [f]
    step = lr
    for t in range(epochs):
        gw, gb = grad_fn(w, b)
        eta = step / (1.0 + decay * t)
        for _ in range(30):
            w_new, b_new = w - eta * gw, b - eta * gb
            f_new = objective_fn(w_new, b_new)
            if f_new <= f:
                w, b, f = w_new, b_new, f_new
                break
            eta *= 0.5
            step *= 0.5
        history.append(f)
    return w, b, history


def fit_svm_primal(X, y, C=0.01, epochs=1000, lr=0.1, objective="A", decay=0.01) -> SvmModel:
    X = as_matrix(X)
    y = _check_pm1(y)
    if C <= 0:
        raise ValueError("C must be > 0")
    if objective not in ("A", "B"):
        raise ValueError("objective must be 'A' or 'B'")
    w, b, hist = _descend(
        lambda w, b: primal_objective(w, b, X, y, C, objective),
        lambda w, b: _primal_subgradient(w, b, X, y, C, objective),
        np.zeros(X.shape[1]), 0.0, epochs, lr, decay,
    )
    return SvmModel(C=C, b=float(b), w=w, objective=objective, history=hist)


def kkt_violation(alpha, y, f, C, tol=0.0) -> np.ndarray:
    """Per-point KKT violation for f = decision value with +b0 convention."""
    yf = y * f
    v = np.zeros_like(alpha)
    lo = alpha <= tol
    hi = alpha >= C - tol
    mid = ~lo & ~hi
    v[lo] = np.maximum(0.0, 1.0 - yf[lo])
    v[hi] = np.maximum(0.0, yf[hi] - 1.0)
    v[mid] = np.abs(yf[mid] - 1.0)
    return v


def fit_svm_dual(X, y, C=1.0, kernel: Kernel | None = None, max_passes=10, tol=1e-4,
                 max_iter=100_000, seed=0) -> SvmModel:
    """Simplified SMO: scan for the first KKT violator, pair it with a random partner.

    Terminates after ``max_passes`` consecutive sweeps with no update. Raises
    :class:`ConvergenceError` when ``max_iter`` sweeps run out.
    """
    X = as_matrix(X)
    y = _check_pm1(y)
    if C <= 0:
        raise ValueError("C must be > 0")
    kernel = kernel or Kernel("linear")
    rng = make_rng(seed)
    n = X.shape[0]
    K = kernel_matrix(kernel, X, X)
    alpha = np.zeros(n)
    b0 = 0.0  # f(x) = sum alpha_j y_j K(x_j, x) + b0
    f_cache = np.zeros(n)
    passes = 0
    sweeps = 0
    while passes < max_passes:
        sweeps += 1
        if sweeps > max_iter:
            v = kkt_violation(alpha, y, f_cache + b0, C, 1e-8).max()
            raise ConvergenceError(f"SMO hit max_iter; max KKT violation {v:.3g}", gap=v)
        changed = 0
        for i in range(n):
            Ei = f_cache[i] + b0 - y[i]
            if not ((y[i] * Ei < -tol and alpha[i] < C) or (y[i] * Ei > tol and alpha[i] > 0)):
                continue
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            Ej = f_cache[j] + b0 - y[j]
            ai, aj = alpha[i], alpha[j]
            if y[i] != y[j]:
                L, H = max(0.0, aj - ai), min(C, C + aj - ai)
            else:
                L, H = max(0.0, ai + aj - C), min(C, ai + aj)
            if H - L < 1e-12:
                continue
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                continue
            aj_new = np.clip(aj - y[j] * (Ei - Ej) / eta, L, H)
            if abs(aj_new - aj) < 1e-7:
                continue
            ai_new = min(max(ai + y[i] * y[j] * (aj - aj_new), 0.0), C)  # rounding only
            b1 = b0 - Ei - y[i] * (ai_new - ai) * K[i, i] - y[j] * (aj_new - aj) * K[i, j]
            b2 = b0 - Ej - y[i] * (ai_new - ai) * K[i, j] - y[j] * (aj_new - aj) * K[j, j]
            if 0 < ai_new < C:
                b0 = b1
            elif 0 < aj_new < C:
                b0 = b2
            else:
                b0 = (b1 + b2) / 2.0
            f_cache += (ai_new - ai) * y[i] * K[i] + (aj_new - aj) * y[j] * K[j]
            alpha[i], alpha[j] = ai_new, aj_new
            changed += 1
        passes = passes + 1 if changed == 0 else 0

    b0 = _intercept(alpha, y, f_cache, C)
    sv = alpha > 1e-10
    model = SvmModel(
        C=C, b=float(-b0), kernel=kernel,
        support_vectors=X[sv].copy(), dual_coef=(alpha * y)[sv], alphas=alpha,
    )
    if kernel.kind == "linear":
        model.w = X.T @ (alpha * y)
    return model


def _intercept(alpha, y, f_no_b, C, eps=1e-8):
    """Mean of y_i - f_i over margin SVs; else midpoint of the feasible interval."""
    margin = (alpha > eps) & (alpha < C - eps)
    if margin.any():
        return float(np.mean(y[margin] - f_no_b[margin]))
    r = y - f_no_b
    # bound constraints: alpha=0 -> y(f+b)>=1, alpha=C -> y(f+b)<=1
    upper = (((alpha <= eps) & (y < 0)) | ((alpha >= C - eps) & (y > 0)))
    lower = ~upper
    lo = r[lower].max() if lower.any() else -np.inf
    hi = r[upper].min() if upper.any() else np.inf
    if np.isinf(lo):
        return float(hi)
    if np.isinf(hi):
        return float(lo)
    return float((lo + hi) / 2.0)


def svr_objective(w, b, X, y, C, epsilon) -> float:
    resid = np.abs(X @ w - b - y)
    return float(0.5 * (w @ w) + C * np.maximum(0.0, resid - epsilon).sum())


def fit_svr_linear(X, y, C=1.0, epsilon=0.1, epochs=2000, lr=0.01, decay=0.001) -> SvmModel:
    """Subgradient descent on 1/2 ||w||^2 + C sum max(0, |w'x - b - y| - eps)."""
    X = as_matrix(X)
    y = as_vector(y)
    if C <= 0 or epsilon < 0:
        raise ValueError("need C > 0 and epsilon >= 0")

    def grad(w, b):
        r = X @ w - b - y
        g = np.where(np.abs(r) > epsilon, np.sign(r), 0.0)
        return w + C * (X.T @ g), -C * g.sum()

    w, b, hist = _descend(
        lambda w, b: svr_objective(w, b, X, y, C, epsilon), grad,
        np.zeros(X.shape[1]), 0.0, epochs, lr, decay,
    )
    return SvmModel(C=C, b=float(b), w=w, objective="svr", history=hist)
