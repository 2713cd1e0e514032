"""Pure-numpy kernel implementations (fallback backend)."""

from __future__ import annotations

import numpy as np

NAME = "python"


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def lloyd_step(x: np.ndarray, centers: np.ndarray):
    """One assignment pass: nearest center per point (first index on ties).

    Returns (labels, point_sqdist, per-center coordinate sums, member counts).
    """
    d2 = pairwise_sqdist(x, centers)
    labels = np.argmin(d2, axis=1)
    point_sqdist = d2[np.arange(x.shape[0]), labels]
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    sums = np.zeros_like(centers, dtype=np.float64)
    for j in range(x.shape[1]):
        sums[:, j] = np.bincount(labels, weights=x[:, j], minlength=k)
    return labels, point_sqdist, sums, counts
