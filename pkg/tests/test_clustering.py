import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyml.clustering import (cut, dbscan_fit, gaussian_pdf, gmm_fit, hierarchical_fit,
                               kernel_pca_fit, kmeans_fit, kmeans_online_update, mvn_pdf,
                               rbf_widths, rbfn_fit, silhouette_by_k)
from polyml.errors import DataError
from polyml.linear import fit_logistic, predict_class
from polyml.svm import Kernel


def blobs(rng, centers, n=40, sd=0.3):
    X = np.vstack([rng.normal(c, sd, size=(n, len(c))) for c in centers])
    return X, np.repeat(np.arange(len(centers)), n)


def moons(rng, n=150, noise=0.05):
    t = rng.uniform(0, np.pi, n)
    a = np.column_stack([np.cos(t), np.sin(t)])
    b = np.column_stack([1 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([a, b]) + rng.normal(0, noise, size=(2 * n, 2))
    return X, np.repeat([0, 1], n)


def rings(rng, n=100):
    t = rng.uniform(0, 2 * np.pi, 2 * n)
    r = np.repeat([1.0, 3.0], n) + rng.normal(0, 0.1, 2 * n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)]), np.repeat([0, 1], n)


def agreement(a, b):
    """Best label agreement over the two ways to match two binary labelings."""
    m = np.mean(a == b)
    return max(m, 1 - m)


# --- k-means ---------------------------------------------------------------------


def test_kmeans_k_equals_n_has_zero_inertia(rng):
    X = rng.normal(size=(6, 2))
    m = kmeans_fit(X, 6, rng=0)
    assert m.inertia < 1e-20
    assert sorted(m.labels) == list(range(6))


def test_kmeans_k1_is_the_mean(rng):
    X = rng.normal(size=(30, 3))
    m = kmeans_fit(X, 1, rng=0)
    assert np.allclose(m.centroids[0], X.mean(0))
    assert m.inertia == pytest.approx(((X - X.mean(0)) ** 2).sum())


def test_kmeans_bad_k():
    with pytest.raises(DataError):
        kmeans_fit(np.zeros((3, 2)), 4)
    with pytest.raises(DataError):
        kmeans_fit(np.zeros((3, 2)), 0)


def test_kmeans_inertia_non_increasing(rng):
    X, _ = blobs(rng, [(0, 0), (3, 0), (0, 3), (3, 3)], sd=1.0)
    for seed in range(5):
        h = kmeans_fit(X, 4, n_init=1, rng=seed).history
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))


def test_silhouette_picks_three_blobs(rng):
    X, _ = blobs(rng, [(0, 0), (5, 0), (2.5, 4)])
    s = silhouette_by_k(X, [2, 3, 6], rng=0)
    assert s[3] > s[2] and s[3] > s[6]


def test_kmeans_recovers_blobs(rng):
    X, y = blobs(rng, [(0, 0), (6, 6)])
    assert agreement(kmeans_fit(X, 2, rng=1).labels, y) == 1.0


def test_online_update_rules():
    C = np.array([[0.0], [10.0]])
    assert np.allclose(kmeans_online_update(C, [4.0], 1.0), [[4.0], [10.0]])
    assert np.allclose(kmeans_online_update(C, [1.0], 0.5), [[0.5], [10.0]])
    # equidistant point moves the lower index
    assert np.allclose(kmeans_online_update(C, [5.0], 0.5), [[2.5], [10.0]])
    with pytest.raises(ValueError):
        kmeans_online_update(C, [1.0], 0.0)


# --- hierarchical ----------------------------------------------------------------------


def test_single_linkage_three_points():
    d = hierarchical_fit(np.array([[0.0], [1.0], [10.0]]), "single")
    A = d.as_array()
    assert np.allclose(A[:, 2], [1.0, 9.0])
    assert tuple(A[0, :2]) == (0, 1) and tuple(A[1, :2]) == (2, 3)
    assert list(cut(d, k=2)) == [0, 0, 1]
    assert list(cut(d, height=0.5)) == [0, 1, 2]


@pytest.mark.parametrize("linkage", ["single", "complete", "average"])
def test_merge_heights_monotone(rng, linkage):
    X = rng.normal(size=(25, 2))
    d = hierarchical_fit(X, linkage)
    h = d.as_array()[:, 2]
    assert len(h) == 24
    assert np.all(np.diff(h) >= -1e-12)
    assert d.merges[-1][3] == 25
    assert len(set(cut(d, k=25))) == 25
    assert len(set(cut(d, k=1))) == 1


def test_complete_and_average_heights_three_points():
    X = np.array([[0.0], [1.0], [10.0]])
    assert hierarchical_fit(X, "complete").as_array()[1, 2] == 10.0
    assert hierarchical_fit(X, "average").as_array()[1, 2] == 9.5


def test_cut_argument_checks(rng):
    d = hierarchical_fit(rng.normal(size=(4, 2)))
    with pytest.raises(ValueError):
        cut(d)
    with pytest.raises(ValueError):
        cut(d, k=2, height=1.0)
    with pytest.raises(ValueError):
        cut(d, k=5)


# --- DBSCAN --------------------------------------------------------------------------


def test_dbscan_core_cluster_and_noise():
    X = np.array([[0, 0], [0.1, 0], [0, 0.1], [5, 5]], dtype=float)
    r = dbscan_fit(X, eps=0.2, min_samples=3)
    assert list(r.labels) == [0, 0, 0, -1]
    assert list(r.roles) == ["core", "core", "core", "noise"]
    assert r.n_clusters == 1


def test_dbscan_border_point():
    X = np.array([[0, 0], [0.1, 0], [0.2, 0], [0.37, 0]], dtype=float)
    r = dbscan_fit(X, eps=0.16, min_samples=3)
    assert list(r.roles) == ["border", "core", "border", "noise"]
    assert list(r.labels) == [0, 0, 0, -1]


def test_dbscan_moons_beats_kmeans(rng):
    X, y = moons(rng)
    r = dbscan_fit(X, eps=0.2, min_samples=5)
    assert r.n_clusters == 2
    keep = r.labels >= 0
    assert agreement(r.labels[keep], y[keep]) == 1.0
    assert agreement(kmeans_fit(X, 2, rng=0).labels, y) < 0.9


def test_dbscan_order_independent_partition(rng):
    X, _ = moons(rng, n=60)
    a = dbscan_fit(X, 0.25, 4)
    perm = rng.permutation(len(X))
    b = dbscan_fit(X[perm], 0.25, 4)
    assert np.array_equal(a.roles[perm], b.roles)
    # same partition of the core points up to relabeling
    core = np.flatnonzero(a.roles == "core")
    inv = np.argsort(perm)
    la, lb = a.labels[core], b.labels[inv[core]]
    assert all((la[i] == la[j]) == (lb[i] == lb[j]) for i in range(len(core)) for j in range(len(core)))


def test_dbscan_argument_checks():
    with pytest.raises(ValueError):
        dbscan_fit(np.zeros((2, 2)), 0.0, 2)


# --- densities and mixtures -----------------------------------------------------------------


def test_gaussian_pdf_values():
    assert gaussian_pdf(0.0, 0.0, 1.0) == pytest.approx(0.39894, abs=1e-5)
    assert gaussian_pdf(1.3, 0.2, 0.7) == pytest.approx(gaussian_pdf(-0.9, 0.2, 0.7))
    x = np.linspace(-10, 10, 20001)
    assert np.trapezoid(gaussian_pdf(x, 0.0, 1.5), x) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        gaussian_pdf(0.0, 0.0, 0.0)


def test_mvn_matches_scipy(rng):
    from scipy.stats import multivariate_normal

    A = rng.normal(size=(3, 3))
    cov, mean = A @ A.T + np.eye(3), rng.normal(size=3)
    X = rng.normal(size=(10, 3))
    assert np.allclose(mvn_pdf(X, mean, cov), multivariate_normal(mean, cov).pdf(X), rtol=1e-10)
    with pytest.raises(DataError):
        mvn_pdf(X, mean, -np.eye(3))


def test_gmm_single_component_is_analytic(rng):
    X = rng.normal(size=(200, 2)) @ np.array([[1.0, 0.5], [0.0, 0.7]])
    m = gmm_fit(X, 1, reg=1e-9, rng=0)
    assert np.allclose(m.means[0], X.mean(0))
    assert np.allclose(m.covs[0], np.cov(X.T, bias=True), atol=1e-8)
    assert m.weights[0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_gmm_log_likelihood_monotone(seed):
    r = np.random.default_rng(seed)
    X, _ = blobs(r, [(0, 0), (2, 1), (-1, 3)], n=50, sd=0.8)
    ll = gmm_fit(X, 3, rng=seed).log_likelihood
    assert len(ll) > 2
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(ll, ll[1:]))


def test_gmm_two_blobs(rng):
    X, y = blobs(rng, [(0, 0), (4, 4)], n=100, sd=0.7)
    m = gmm_fit(X, 2, rng=3)
    assert agreement(m.predict(X), y) >= 0.98
    P = m.predict_proba(X)
    assert np.allclose(P.sum(1), 1.0)
    assert np.all((P >= 0) & (P <= 1))
    assert m.weights.sum() == pytest.approx(1.0)


def test_gmm_outlier_flag(rng):
    X, _ = blobs(rng, [(0, 0), (4, 4)], n=100, sd=0.5)
    m = gmm_fit(X, 2, rng=0)
    assert m.outlier_flag(X).mean() <= 0.03
    assert m.outlier_flag(np.array([[20.0, -20.0]]))[0]


# --- kernel PCA ----------------------------------------------------------------------------


def test_linear_kpca_matches_pca(rng):
    X = rng.normal(size=(40, 3)) @ rng.normal(size=(3, 3))
    k = kernel_pca_fit(X, Kernel("linear"), 2)
    Xc = X - X.mean(0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    ref = Xc @ Vt[:2].T
    for j in range(2):
        s = np.sign(ref[:, j] @ k.projections[:, j])
        assert np.max(np.abs(s * ref[:, j] - k.projections[:, j])) < 1e-8
    assert np.allclose(k.transform(X), k.projections, atol=1e-8)


def test_kpca_duplicates_project_identically(rng):
    X = rng.normal(size=(20, 2))
    X[7] = X[3]
    P = kernel_pca_fit(X, Kernel("rbf", gamma=0.5), 3).projections
    assert np.allclose(P[7], P[3])


def test_kpca_separates_rings(rng):
    X, y = rings(rng)
    P = kernel_pca_fit(X, Kernel("rbf", gamma=0.5), 2).projections
    m = fit_logistic(P / np.abs(P).max(0), y, lr=1.0, epochs=5000)
    assert np.mean(predict_class(m, P / np.abs(P).max(0)) == y) == 1.0
    # a linear classifier on the raw coordinates cannot do this
    raw = fit_logistic(X, y, lr=0.5, epochs=2000)
    assert np.mean(predict_class(raw, X) == y) < 0.8


# --- RBF network ---------------------------------------------------------------------------


def test_rbf_activation_at_center_and_width():
    C = np.array([[0.0, 0.0], [3.0, 4.0], [10.0, 0.0]])
    w, floored = rbf_widths(C, 1)
    assert np.allclose(w, [5.0, 5.0, np.sqrt(65)])
    assert floored == 0
    w2, _ = rbf_widths(C, 2)
    assert w2[0] == pytest.approx(np.sqrt((25 + 100) / 2))
    m = rbfn_fit(C, [0, 1, 0], L=3, P=1, epochs=1, centers=C, rng=0)
    assert np.allclose(np.diag(m.activations(C)), 1.0)
    with pytest.raises(ValueError):
        rbf_widths(C, 3)


def test_rbf_widths_floor():
    w, floored = rbf_widths(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]), 1)
    assert floored == 2 and w[0] == 1e-6


def test_rbfn_learns_xor():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    m = rbfn_fit(X, y, L=4, P=2, lr=0.5, epochs=3000, rng=0)
    assert list(m.predict(X)) == list(y)
    assert m.history[-1] < m.history[0]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12, unique=True))
def test_single_linkage_heights_match_sorted_gaps(xs):
    # in one dimension single linkage merges at exactly the sorted neighbor gaps
    d = hierarchical_fit(np.array(xs)[:, None], "single")
    gaps = np.sort(np.diff(np.sort(xs)))
    assert np.allclose(d.as_array()[:, 2], gaps)
