"""Distribution and sequence distances: Frechet, 1-Wasserstein and DTW."""

from __future__ import annotations

import numba
import numpy as np

W1_GRID = 512


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(real, gen, eps_cov: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two ``(n, d)`` feature sets.

    ``||mu_r - mu_g||^2 + tr(S_r) + tr(S_g) - 2 tr((S_r^1/2 S_g S_r^1/2)^1/2)``
    with ``eps_cov`` added to both covariance diagonals.
    """
    a = np.asarray(real, dtype=np.float64)
    b = np.asarray(gen, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("each feature set needs at least 2 samples")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False)) + eps_cov * np.eye(d)
    cov_b = np.atleast_2d(np.cov(b, rowvar=False)) + eps_cov * np.eye(d)
    root_a = _sym_sqrt(cov_a)
    mid = root_a @ cov_b @ root_a
    w = np.linalg.eigvalsh((mid + mid.T) / 2)
    trace_root = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_root)
    return max(value, 0.0)


def quantile_grid(samples, n: int = W1_GRID) -> np.ndarray:
    """Quantile function on ``(k + 0.5) / n`` by linear interpolation of the sorted samples."""
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("empty sample")
    if s.size == 1:
        return np.full(n, s[0])
    q = (np.arange(n) + 0.5) / n
    return np.interp(q * (s.size - 1), np.arange(s.size), s)


def wasserstein1(a, b, n: int = W1_GRID) -> float:
    """Mean absolute difference of the two quantile functions on a common grid."""
    return float(np.mean(np.abs(quantile_grid(a, n) - quantile_grid(b, n))))


@numba.njit(cache=True)
def _dtw_kernel(a, b):
    n, m = a.shape[0], b.shape[0]
    inf = np.inf
    cost = np.full((n + 1, m + 1), inf)
    length = np.zeros((n + 1, m + 1))
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            # lexicographic (cost, length) minimum keeps the result symmetric
            bc, bl = cost[i - 1, j - 1], length[i - 1, j - 1]
            c, l = cost[i - 1, j], length[i - 1, j]
            if c < bc or (c == bc and l < bl):
                bc, bl = c, l
            c, l = cost[i, j - 1], length[i, j - 1]
            if c < bc or (c == bc and l < bl):
                bc, bl = c, l
            cost[i, j] = bc + abs(a[i - 1] - b[j - 1])
            length[i, j] = bl + 1.0
    return cost[n, m] / length[n, m]


def dtw(a, b) -> float:
    """Unconstrained DTW with ``|a_i - b_j|`` local cost, divided by the optimal path length."""
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw needs non-empty series")
    return float(_dtw_kernel(a, b))


@numba.njit(cache=True)
def _dtw_matrix(xs, ys):
    out = np.empty((xs.shape[0], ys.shape[0]))
    for i in range(xs.shape[0]):
        for j in range(ys.shape[0]):
            out[i, j] = _dtw_kernel(xs[i], ys[j])
    return out


def dtw_matrix(xs, ys) -> np.ndarray:
    """Pairwise DTW between the rows of two ``(n, L)`` arrays."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    return _dtw_matrix(xs, ys)
