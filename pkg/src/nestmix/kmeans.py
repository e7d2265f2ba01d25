"""Small seeded Lloyd's k-means used for warm starts."""
from __future__ import annotations

import numpy as np

from .rng import RngStream


def _plus_plus(x, k, rng: RngStream):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(0, n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c:] = centers[0]
            break
        idx = int(np.searchsorted(np.cumsum(d2), rng.uniform() * total))
        centers[c] = x[min(idx, n - 1)]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(x, centers, max_iter):
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        if np.allclose(new, centers, rtol=0, atol=1e-12):
            centers = new
            break
        centers = new
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    return centers, labels, inertia


def kmeans(x, k: int, rng: RngStream, n_init: int = 10, max_iter: int = 50):
    """Lloyd's algorithm with k-means++ seeding and ``n_init`` restarts.

    Returns ``(centers, labels, inertia)`` of the lowest-inertia restart.
    ``centers`` is ``(k,)`` for 1-D input and ``(k, d)`` otherwise.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    if flat:
        x = x[:, None]
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    best = None
    for _ in range(n_init):
        res = _lloyd(x, _plus_plus(x, k, rng), max_iter)
        if best is None or res[2] < best[2]:
            best = res
    centers, labels, inertia = best
    return (centers[:, 0] if flat else centers), labels, inertia
