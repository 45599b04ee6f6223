"""K-means (batch and online), agglomerative clustering, DBSCAN, Gaussian
mixtures, kernel PCA and radial-basis-function networks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError
from .metrics import pairwise_distances
from .numeric import as_matrix, make_rng
from .svm import Kernel, kernel_matrix


def _sqdist(A, B):
    return np.maximum((A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T, 0.0)


# --- k-means -------------------------------------------------------------------


@dataclass
class KMeansModel:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    history: list = field(default_factory=list)  # inertia after each assignment step

    def predict(self, X) -> np.ndarray:
        return np.argmin(_sqdist(as_matrix(X), self.centroids), axis=1)


def kmeans_plus_plus(X, k, rng) -> np.ndarray:
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = _sqdist(X, X[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        j = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(j)
        d2 = np.minimum(d2, _sqdist(X, X[[j]])[:, 0])
    return X[idx].copy()


def _lloyd(X, C, max_iter):
    history, labels = [], None
    for it in range(1, max_iter + 1):
        D = _sqdist(X, C)
        new = np.argmin(D, axis=1)
        history.append(float(D[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            return C, labels, history, it
        labels = new
        for j in range(C.shape[0]):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(0)
            else:
                # reseed an empty cluster to the point farthest from its centroid
                far = int(np.argmax(D[np.arange(len(X)), labels]))
                C[j] = X[far]
                labels[far] = j
    return C, labels, history, max_iter


def kmeans_fit(X, k: int, n_init: int = 10, max_iter: int = 300, rng=None) -> KMeansModel:
    """Lloyd iterations from k-means++ seeds; best of ``n_init`` restarts by inertia."""
    X = as_matrix(X)
    if not 1 <= k <= X.shape[0]:
        raise DataError(f"k={k} must be between 1 and the number of points {X.shape[0]}")
    rng = make_rng(rng)
    best = None
    for _ in range(max(1, n_init)):
        C, labels, hist, it = _lloyd(X, kmeans_plus_plus(X, k, rng), max_iter)
        inertia = float(_sqdist(X, C)[np.arange(len(X)), labels].sum())
        if best is None or inertia < best.inertia - 1e-12:
            best = KMeansModel(C, labels, inertia, it, hist)
    return best


def kmeans_online_update(centroids, x, alpha: float) -> np.ndarray:
    """Move only the nearest centroid (lowest index on ties) a fraction alpha toward x."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    C = np.array(centroids, dtype=float)
    x = np.asarray(x, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    j = int(np.argmin(((C - x.reshape(1, -1)) ** 2).sum(1)))
    C[j] = C[j] + alpha * (x.reshape(-1) - C[j])
    return C.reshape(np.shape(centroids))


# --- hierarchical --------------------------------------------------------------


@dataclass
class Dendrogram:
    """``merges[i] = (a, b, distance, size)``; new clusters get ids n, n+1, ..."""

    n: int
    merges: list
    linkage: str = "single"

    def as_array(self) -> np.ndarray:
        return np.array(self.merges, dtype=float).reshape(-1, 4)


def hierarchical_fit(X, linkage: str = "single") -> Dendrogram:
    """Greedy nearest-pair merging with Lance-Williams distance updates."""
    if linkage not in ("single", "complete", "average"):
        raise ValueError(f"unknown linkage {linkage!r}")
    X = as_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise DataError("need at least 2 points")
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(D, np.inf)
    ids = list(range(n))
    sizes = [1] * n
    active = np.ones(n, dtype=bool)
    merges = []
    for step in range(n - 1):
        M = np.where(active[:, None] & active[None, :], D, np.inf)
        flat = int(np.argmin(M))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        d = float(D[i, j])
        ni, nj = sizes[i], sizes[j]
        merges.append((min(ids[i], ids[j]), max(ids[i], ids[j]), d, ni + nj))
        if linkage == "single":
            new = np.minimum(D[i], D[j])
        elif linkage == "complete":
            new = np.maximum(D[i], D[j])
        else:
            new = (ni * D[i] + nj * D[j]) / (ni + nj)
        D[i, :] = new
        D[:, i] = new
        D[i, i] = np.inf
        active[j] = False
        D[j, :] = np.inf
        D[:, j] = np.inf
        ids[i] = n + step
        sizes[i] = ni + nj
    return Dendrogram(n, merges, linkage)


def cut(dendrogram: Dendrogram, k: int | None = None, height: float | None = None) -> np.ndarray:
    """Flat labels (numbered by first appearance) from the first merges.

    ``k`` keeps that many clusters; ``height`` applies every merge at
    distance <= height.
    """
    n = dendrogram.n
    if (k is None) == (height is None):
        raise ValueError("give exactly one of k or height")
    if k is not None:
        if not 1 <= k <= n:
            raise ValueError("k must be in [1, n]")
        n_merges = n - k
    else:
        n_merges = sum(1 for m in dendrogram.merges if m[2] <= height)
    parent = list(range(2 * n - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for step, (a, b, _, _) in enumerate(dendrogram.merges[:n_merges]):
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    roots = [find(i) for i in range(n)]
    order = {}
    return np.array([order.setdefault(r, len(order)) for r in roots])


# --- DBSCAN ----------------------------------------------------------------------

NOISE = -1


@dataclass
class DbscanResult:
    labels: np.ndarray  # cluster id, or -1 for noise
    roles: np.ndarray  # "core" | "border" | "noise"

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max() + 1) if (self.labels >= 0).any() else 0


def dbscan_fit(X, eps: float, min_samples: int) -> DbscanResult:
    """Density clustering; a point is core when at least ``min_samples`` points,
    itself included, lie within distance ``eps``."""
    if not eps > 0 or min_samples < 1:
        raise ValueError("need eps > 0 and min_samples >= 1")
    X = as_matrix(X)
    n = X.shape[0]
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    neigh = [np.flatnonzero(D[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_samples for nb in neigh])
    labels = np.full(n, NOISE)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = [i]
        while queue:
            p = queue.pop()
            for q in neigh[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    roles = np.where(core, "core", np.where(labels >= 0, "border", "noise"))
    return DbscanResult(labels, roles)


# --- Gaussian densities and mixtures -------------------------------------------------


def gaussian_pdf(x, mu: float, sigma: float):
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * np.sqrt(2 * np.pi))


def mvn_logpdf(X, mean, cov) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T):
        raise DataError("covariance is not symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DataError("covariance is not positive definite") from None
    z = np.linalg.solve(L, (X - mean).T)
    d = mean.size
    return -0.5 * (z**2).sum(0) - np.log(np.diag(L)).sum() - 0.5 * d * np.log(2 * np.pi)


def mvn_pdf(X, mean, cov):
    out = np.exp(mvn_logpdf(X, mean, cov))
    return out[0] if np.ndim(X) == 1 else out


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_likelihood: list = field(default_factory=list)
    converged: bool = False
    train_scores: np.ndarray | None = None

    def _log_joint(self, X):
        X = as_matrix(X)
        return np.column_stack([np.log(w) + mvn_logpdf(X, m, c)
                                for w, m, c in zip(self.weights, self.means, self.covs)])

    def predict_proba(self, X) -> np.ndarray:
        lj = self._log_joint(X)
        lj -= lj.max(1, keepdims=True)
        p = np.exp(lj)
        return p / p.sum(1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self._log_joint(X), axis=1)

    def score_samples(self, X) -> np.ndarray:
        """Per-point mixture log-density."""
        lj = self._log_joint(X)
        m = lj.max(1)
        return m + np.log(np.exp(lj - m[:, None]).sum(1))

    def max_component_density(self, X) -> np.ndarray:
        return np.exp(self._log_joint(X).max(1))

    def outlier_flag(self, X, quantile: float = 0.02) -> np.ndarray:
        """True where the largest weighted component density falls below the
        ``quantile`` of the same statistic on the training data."""
        thr = np.quantile(self.train_scores, quantile)
        return self.max_component_density(X) < thr


def gmm_fit(X, k: int, max_iter: int = 200, tol: float = 1e-6, reg: float = 1e-6,
            rng=None) -> GmmModel:
    """EM for a full-covariance mixture. Stops when the log-likelihood gain < tol."""
    X = as_matrix(X)
    n, d = X.shape
    if not 1 <= k <= n:
        raise DataError(f"k={k} must be between 1 and the number of points {n}")
    if not reg > 0:
        raise ValueError("reg must be > 0")
    rng = make_rng(rng)
    means = kmeans_plus_plus(X, k, rng)
    base_cov = np.cov(X.T, bias=True).reshape(d, d) + reg * np.eye(d)
    model = GmmModel(np.full(k, 1.0 / k), means, np.array([base_cov.copy() for _ in range(k)]))
    prev = -np.inf
    for _ in range(max_iter):
        lj = model._log_joint(X)
        m = lj.max(1, keepdims=True)
        ll_rows = m[:, 0] + np.log(np.exp(lj - m).sum(1))
        ll = float(ll_rows.sum())
        model.log_likelihood.append(ll)
        if ll - prev < tol:
            model.converged = True
            break
        prev = ll
        R = np.exp(lj - ll_rows[:, None])
        Nk = R.sum(0)
        if np.any(Nk < 1e-10):
            raise ConvergenceError(f"degenerate component: weight {Nk.min() / n:.3g}", gap=float(Nk.min()))
        model.weights = Nk / n
        model.means = (R.T @ X) / Nk[:, None]
        for j in range(k):
            Xc = X - model.means[j]
            model.covs[j] = (R[:, j, None] * Xc).T @ Xc / Nk[j] + reg * np.eye(d)
    model.train_scores = model.max_component_density(X)
    return model


# --- kernel PCA ----------------------------------------------------------------------


@dataclass
class KernelPCA:
    kernel: Kernel
    X_fit: np.ndarray
    alphas: np.ndarray  # eigenvectors scaled by 1/sqrt(eigenvalue)
    eigenvalues: np.ndarray
    K_col_mean: np.ndarray
    K_mean: float
    projections: np.ndarray

    def transform(self, X) -> np.ndarray:
        Kx = kernel_matrix(self.kernel, as_matrix(X), self.X_fit)
        Kc = Kx - Kx.mean(1, keepdims=True) - self.K_col_mean[None, :] + self.K_mean
        return Kc @ self.alphas


def kernel_pca_fit(X, kernel: Kernel | None = None, n_components: int = 2) -> KernelPCA:
    X = as_matrix(X)
    n = X.shape[0]
    if not 1 <= n_components <= n:
        raise ValueError("n_components must be in [1, n]")
    kernel = kernel or Kernel("linear")
    K = kernel_matrix(kernel, X, X)
    col_mean = K.mean(0)
    total = K.mean()
    Kc = K - col_mean[None, :] - col_mean[:, None] + total
    Kc = (Kc + Kc.T) / 2
    lam, V = np.linalg.eigh(Kc)
    order = np.argsort(lam)[::-1][:n_components]
    lam, V = np.clip(lam[order], 0.0, None), V[:, order]
    for j in range(V.shape[1]):
        if V[np.argmax(np.abs(V[:, j])), j] < 0:
            V[:, j] = -V[:, j]
    scale = np.where(lam > 1e-12 * max(lam.max(), 1e-300), 1.0 / np.sqrt(np.where(lam > 0, lam, 1)), 0.0)
    alphas = V * scale
    return KernelPCA(kernel, X, alphas, lam, col_mean, total, Kc @ alphas)


# --- RBF network ------------------------------------------------------------------------


@dataclass
class RbfnModel:
    centers: np.ndarray
    widths: np.ndarray
    W: np.ndarray  # (L + 1) x M, row 0 is the bias weight (bias node v0 = 1)
    history: list = field(default_factory=list)
    floored: int = 0  # number of widths floored at 1e-6

    def activations(self, X) -> np.ndarray:
        """v_k = exp(-||x - c_k||^2 / sigma_k^2)."""
        return np.exp(-_sqdist(as_matrix(X), self.centers) / self.widths[None, :] ** 2)

    def predict_proba(self, X) -> np.ndarray:
        V = self.activations(X)
        out = 1.0 / (1.0 + np.exp(-(self.W[0] + V @ self.W[1:])))
        return out[:, 0] if out.shape[1] == 1 else out

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)


def online_kmeans(X, L: int, iters: int = 2000, alpha0: float = 0.5, rng=None) -> np.ndarray:
    """Centers from L distinct rows, then nearest-center updates with
    alpha(t) = alpha0 / (1 + t / n) on randomly drawn rows."""
    X = as_matrix(X)
    rng = make_rng(rng)
    uniq = np.unique(X, axis=0)
    if L > uniq.shape[0]:
        raise DataError(f"L={L} exceeds the number of distinct points {uniq.shape[0]}")
    C = uniq[np.sort(rng.choice(uniq.shape[0], size=L, replace=False))].copy()
    n = X.shape[0]
    for t in range(iters):
        C = kmeans_online_update(C, X[rng.integers(n)], alpha0 / (1.0 + t / n))
    return C


def rbf_widths(centers, P: int) -> tuple[np.ndarray, int]:
    """RMS distance to the P nearest other centers, floored at 1e-6."""
    C = as_matrix(centers)
    L = C.shape[0]
    if not 1 <= P <= L - 1:
        raise ValueError("P must be in [1, L-1]")
    D2 = _sqdist(C, C)
    np.fill_diagonal(D2, np.inf)
    nearest = np.sort(D2, axis=1)[:, :P]
    w = np.sqrt(nearest.mean(1))
    floored = int((w < 1e-6).sum())
    return np.maximum(w, 1e-6), floored


def rbfn_fit(X, y, L: int, P: int = 2, kmeans_iters: int = 2000, lr: float = 0.5,
             epochs: int = 2000, momentum: float = 0.0, rng=None, centers=None) -> RbfnModel:
    """Two phases: online k-means fixes centers and widths, then the sigmoid
    output layer is trained pattern-by-pattern with the delta rule
    ``w += lr * v * y(1-y)(d-y)`` (plus optional momentum)."""
    X = as_matrix(X)
    Y = np.asarray(y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    if L > X.shape[0]:
        raise DataError("L must not exceed the number of rows")
    rng = make_rng(rng)
    C = as_matrix(centers) if centers is not None else online_kmeans(X, L, kmeans_iters, rng=rng)
    widths, floored = rbf_widths(C, P)
    model = RbfnModel(C, widths, np.zeros((C.shape[0] + 1, Y.shape[1])), floored=floored)
    V = np.hstack([np.ones((X.shape[0], 1)), model.activations(X)])
    prev = np.zeros_like(model.W)
    for _ in range(epochs):
        for i in rng.permutation(X.shape[0]):
            out = 1.0 / (1.0 + np.exp(-(V[i] @ model.W)))
            eps = out * (1 - out) * (Y[i] - out)
            delta = lr * np.outer(V[i], eps) + momentum * prev
            model.W += delta
            prev = delta
        out = 1.0 / (1.0 + np.exp(-(V @ model.W)))
        model.history.append(float(np.mean((Y - out) ** 2)))
    return model


def silhouette_by_k(X, ks, rng=None) -> dict:
    """Silhouette score of the best k-means fit for each k."""
    from .metrics import silhouette_score

    return {k: silhouette_score(X, kmeans_fit(X, k, rng=make_rng(rng)).labels) for k in ks}


def distance_matrix(X) -> np.ndarray:
    return pairwise_distances(as_matrix(X))
