"""Lloyd k-means with probabilistic farthest-point seeding.

Deterministic given the seed: assignment ties break to the lowest centroid
index, empty clusters are re-seeded to the point farthest from its current
centroid, and iteration stops at an assignment fixpoint or max_iters.
Distances are squared Euclidean.
"""

from __future__ import annotations

import numpy as np


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    first = int(rng.integers(n))
    chosen = [first]
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick uniformly
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """Cluster points (M, C) into k centroids (k, C)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be (M, C); got shape {points.shape}")
    m = points.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"need M >= k >= 1; got M={m}, k={k}")

    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(points, k, rng)
    assign = np.full(m, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if members.shape[0] == 0:
                # re-seed to the point farthest from its own centroid
                dist_to_own = d2[np.arange(m), assign]
                far = int(dist_to_own.argmax())
                centroids[j] = points[far]
            else:
                centroids[j] = members.mean(axis=0)
    return centroids


def kmeans_objective(points: np.ndarray, centroids: np.ndarray) -> float:
    """Sum of squared distances from each point to its nearest centroid."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())
