"""Seeded k-means++ / Lloyd clustering and the silhouette coefficient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300, tol: float = 1e-10) -> KMeansResult:
    for _ in range(max_iter):
        labels = np.argmin(_sq_dists(x, centers), axis=1)
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.sum((new - centers) ** 2))
        centers = new
        if shift <= tol:
            break
    d = _sq_dists(x, centers)
    labels = np.argmin(d, axis=1)
    return KMeansResult(labels, centers, float(d[np.arange(len(x)), labels].sum()))


def kmeans(x, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Best of ``n_init`` seeded k-means++ restarts by inertia."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or x.shape[0] < k:
        raise ValueError(f"need at least k={k} samples, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = lloyd(x, kmeans_pp_init(x, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def silhouette_score(x, labels) -> float:
    """Mean of ``(b - a) / max(a, b)``; members of singleton clusters score 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    dist = np.sqrt(_sq_dists(x, x))
    np.fill_diagonal(dist, 0.0)
    onehot = np.eye(uniq.size)[inv]
    sums = dist @ onehot  # (n, k) summed distance to each cluster
    sizes = onehot.sum(0)
    own = sizes[inv]
    a = sums[np.arange(len(x)), inv] / np.maximum(own - 1, 1)
    other = sums / sizes[None, :]
    other[np.arange(len(x)), inv] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(np.clip(s.mean(), -1.0, 1.0))


def cluster_silhouette(features, k: int, seed: int = 0, n_init: int = 10) -> float:
    """Silhouette of the k-means partition of ``features``."""
    features = np.asarray(features, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    res = kmeans(features, k, seed=seed, n_init=n_init)
    if np.unique(res.labels).size < 2:
        return 0.0
    return silhouette_score(features, res.labels)
