"""Framework-free numerical kernels shared by the validation criteria.

All functions are pure and deterministic; k-means is deterministic given its
config seed, with restarts resolved by best inertia (ties to the lowest
restart index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K


@dataclass
class ClusterConfig:
    """k-means configuration. ``k=None`` means "number of classes", filled in
    by the caller that knows the pack."""

    k: int | None = None
    restarts: int = 10
    max_iters: int = 300
    tol: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if self.k is not None and self.k < 1:
            raise ValueError(f"k={self.k} must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass
class ContingencyTable:
    counts: np.ndarray  # K_a x K_b, non-negative ints
    n: int

    def row_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def _require_finite(m: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    return arr


def singular_values(m: np.ndarray) -> np.ndarray:
    """Singular values of a real matrix, non-increasing.

    Values below 1e-10 of the largest are clamped to zero so rank-sensitive
    consumers are not fooled by round-off.
    """
    arr = _require_finite(m, "matrix")
    if arr.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    sv = np.linalg.svd(arr, compute_uv=False)
    if sv.size and sv[0] > 0:
        sv[sv < 1e-10 * sv[0]] = 0.0
    return sv


def covariance(m: np.ndarray) -> np.ndarray:
    """Unbiased covariance (divisor N-1) of row-observations."""
    arr = _require_finite(m, "matrix")
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("covariance needs at least 2 observations")
    centered = arr - arr.mean(axis=0)
    return centered.T @ centered / (arr.shape[0] - 1)


def rbf_kernel(a: np.ndarray, b: np.ndarray, bandwidth: float) -> float:
    """exp(-||a - b||^2 / bandwidth)."""
    va = _require_finite(a, "a").ravel()
    vb = _require_finite(b, "b").ravel()
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch {va.shape} vs {vb.shape}")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    diff = va - vb
    return float(np.exp(-np.dot(diff, diff) / bandwidth))


def rbf_kernel_matrix(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return np.exp(-K.pairwise_sqdist(a, b) / bandwidth)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[int(rng.integers(n))]
    d2 = K.pairwise_sqdist(x, centers[0:1])[:, 0]
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = x[idx]
        np.minimum(d2, K.pairwise_sqdist(x, centers[c:c + 1])[:, 0], out=d2)
    return centers


def _reseed_empty(x, centers, point_sqdist, empty_ids):
    # Move each empty center onto the point currently farthest from its
    # assigned center; claim points so two empties never collide.
    order = np.argsort(-point_sqdist, kind="stable")
    taken: set[int] = set()
    pos = 0
    for c in empty_ids:
        while pos < order.size and int(order[pos]) in taken:
            pos += 1
        pick = int(order[min(pos, order.size - 1)])
        taken.add(pick)
        pos += 1
        centers[c] = x[pick]


def _lloyd(x, centers, max_iters, tol, restart, trace):
    labels = np.zeros(x.shape[0], dtype=np.int64)
    inertia = 0.0
    for iteration in range(max_iters):
        labels, point_sqdist, sums, counts = K.lloyd_step(x, centers)
        empty = np.nonzero(counts == 0)[0]
        if empty.size:
            _reseed_empty(x, centers, point_sqdist, empty)
            labels, point_sqdist, sums, counts = K.lloyd_step(x, centers)
        inertia = float(point_sqdist.sum())
        if trace is not None:
            trace.append((restart, iteration, inertia))
        safe_counts = np.maximum(counts, 1)[:, None]
        new_centers = np.where(counts[:, None] > 0, sums / safe_counts, centers)
        shift = float(np.linalg.norm(new_centers - centers))
        centers = new_centers
        if shift <= tol * (float(np.linalg.norm(centers)) + 1e-12):
            break
    return labels, centers, inertia


def kmeans(points: np.ndarray, cfg: ClusterConfig,
           trace: list | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """k-means with k-means++ seeding and multiple restarts.

    Returns (labels, centers, inertia) of the best-inertia restart. Empty
    clusters are re-seeded to the point farthest from its assigned center.
    The optional ``trace`` list receives (restart, iteration, inertia)
    tuples after every assignment pass.
    """
    cfg.validate()
    if cfg.k is None:
        raise ValueError("ClusterConfig.k unset")
    x = _require_finite(points, "points")
    if x.ndim != 2:
        raise ValueError("points must be 2-D")
    if x.shape[0] < cfg.k:
        raise ValueError(f"need at least k={cfg.k} points, got {x.shape[0]}")
    rng = np.random.default_rng(cfg.seed)
    inits = [_kmeanspp_init(x, cfg.k, rng) for _ in range(cfg.restarts)]
    best = None
    for restart, init in enumerate(inits):
        labels, centers, inertia = _lloyd(x, init.copy(), cfg.max_iters, cfg.tol,
                                          restart, trace)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best


def contingency(labels_a, labels_b) -> ContingencyTable:
    """Pair-count table: counts[i, j] = #{t : a_t = u_i and b_t = v_j} over
    the distinct values of each labelling."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape[0]} vs {b.shape[0]}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka = int(ai.max()) + 1 if ai.size else 0
    kb = int(bi.max()) + 1 if bi.size else 0
    counts = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(counts, (ai, bi), 1)
    return ContingencyTable(counts=counts, n=int(a.shape[0]))


def _neg_xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=np.float64)
    mask = p > 0
    out[mask] = -p[mask] * np.log(p[mask])
    return out


def entropy(p: np.ndarray) -> float:
    """Shannon entropy (natural log) of a probability vector; 0*log0 = 0."""
    vec = _require_finite(p, "p").ravel()
    if vec.size and vec.min() < 0:
        raise ValueError("negative probability entry")
    total = vec.sum()
    if abs(total - 1.0) > 1e-4:
        raise ValueError(f"probabilities sum to {total:.6f}, expected 1")
    return float(_neg_xlogx(vec).sum())


def rowwise_entropy(p: np.ndarray) -> np.ndarray:
    """Per-row -sum(p log p) without normalization checks (scorer plumbing)."""
    arr = np.asarray(p, dtype=np.float64)
    return _neg_xlogx(arr).sum(axis=1)


def average_ranks(values) -> np.ndarray:
    """1-based ranks of values sorted ascending, ties sharing the mean of
    their positions."""
    v = _require_finite(values, "values").ravel()
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.shape[0], dtype=np.float64)
    i = 0
    while i < v.shape[0]:
        j = i
        while j < v.shape[0] and v[order[j]] == v[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    return ranks


def row_softmax(m: np.ndarray, temperature: float,
                exclude_diagonal: bool = False) -> np.ndarray:
    """Row-stochastic softmax with temperature; excluded diagonal entries are
    zeroed and each row renormalizes over the remaining entries."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = _require_finite(m, "matrix") / temperature
    if exclude_diagonal:
        if x.shape[0] != x.shape[1]:
            raise ValueError("diagonal exclusion needs a square matrix")
        if x.shape[0] < 2:
            raise ValueError("diagonal exclusion leaves an empty row")
        np.fill_diagonal(x, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    if exclude_diagonal:
        np.fill_diagonal(e, 0.0)
    return e / e.sum(axis=1, keepdims=True)
