"""Dense linear algebra helpers and seeded randomness.

Matrices and vectors are plain float64 numpy arrays; the helpers here only
add the shape and finiteness checks the rest of the package relies on.
Randomness always flows from :func:`make_rng`, which wraps numpy's PCG64
bit generator so a given seed yields the same stream on every platform.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

PINV_RCOND = 1e-12


def as_matrix(x, name="matrix") -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got {m.ndim}-D")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: non-finite entries")
    return m


def as_vector(x, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        v = v.reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: non-finite entries")
    return v


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: {a.shape} vs {b.shape}")
    return a * b


def pseudoinverse(m, rcond: float = PINV_RCOND) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``rcond * max(s)`` are treated as zero.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise ShapeError("pseudoinverse: empty matrix")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    keep = s > rcond * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def make_rng(seed=None) -> np.random.Generator:
    """Seeded PCG64 generator; an existing Generator is passed through."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_seeds(rng: np.random.Generator, n: int) -> list[int]:
    """Derive ``n`` independent integer seeds (used for per-learner streams)."""
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=n)]
