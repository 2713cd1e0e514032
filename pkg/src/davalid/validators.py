"""The fifteen validation criteria, as pure scoring functions over recorded
checkpoint outputs.

Each criterion has a fixed orientation: selection always maximizes the
*oriented* score, which is the raw score negated for lower-is-better kinds.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .datapack import BundleKey, CheckpointRecord, PackManifest, PackReader, discretize_bbox
from .errors import InapplicableValidatorError
from .numerics import (
    ClusterConfig,
    ContingencyTable,
    contingency,
    covariance,
    kmeans,
    rbf_kernel_matrix,
    row_softmax,
    rowwise_entropy,
    singular_values,
)

KINDS = ("Accuracy", "MSE", "Entropy", "InfoMax", "BNM", "SND", "MMD", "CORAL",
         "RankMe", "AMI", "ARI", "VMeasure", "FMI", "Silhouette", "DBI", "CHI")

HIGHER_BETTER = {"Accuracy", "InfoMax", "BNM", "RankMe", "AMI", "ARI",
                 "VMeasure", "FMI", "Silhouette", "CHI"}
LOWER_BETTER = {"MSE", "Entropy", "SND", "MMD", "CORAL", "DBI"}

CLUSTERING_EXTERNAL = {"AMI", "ARI", "VMeasure", "FMI"}
CLUSTERING_INTERNAL = {"Silhouette", "DBI", "CHI"}
TWO_SAMPLE = {"MMD", "CORAL"}

VALID_SPLITS = ("source-val", "target-train", "target-val")
_SPLIT_LOCATION = {
    "source-val": ("source", "val"),
    "target-train": ("target", "train"),
    "target-val": ("target", "val"),
}

DEFAULT_SND_TEMPERATURE = 0.05
DEFAULT_RANKME_EPSILON = 1e-7
DEFAULT_MMD_BANDWIDTH_MODE = "median"  # or "euler"


class UndefinedScore(Exception):
    """The metric is undefined for this particular checkpoint's outputs
    (e.g. a single predicted class); reported as an invalid score, never 0."""


@dataclass(frozen=True)
class ValidatorSpec:
    kind: str
    layer: str = "predictions"
    splits: tuple[str, ...] = ("target-val",)
    orientation: str | None = None  # None -> default for kind
    snd_temperature: float = DEFAULT_SND_TEMPERATURE
    mmd_bandwidth_mode: str = DEFAULT_MMD_BANDWIDTH_MODE
    rankme_epsilon: float = DEFAULT_RANKME_EPSILON
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    spec_id: str | None = None

    @property
    def id(self) -> str:
        if self.spec_id:
            return self.spec_id
        return {"VMeasure": "v_measure", "InfoMax": "infomax"}.get(
            self.kind, self.kind.lower())

    @property
    def effective_orientation(self) -> str:
        if self.orientation is not None:
            return self.orientation
        return "higher-better" if self.kind in HIGHER_BETTER else "lower-better"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown validator kind {self.kind!r}")
        if self.layer not in ("features", "logits", "predictions"):
            raise ValueError(f"unknown layer {self.layer!r}")
        if not self.splits:
            raise ValueError("spec needs at least one split")
        for split in self.splits:
            if split not in VALID_SPLITS:
                raise ValueError(f"unknown split {split!r}")
        if self.orientation not in (None, "higher-better", "lower-better"):
            raise ValueError(f"bad orientation {self.orientation!r}")
        if self.kind in TWO_SAMPLE:
            sides = {split.split("-")[0] for split in self.splits}
            if sides != {"source", "target"}:
                raise ValueError(
                    f"{self.id} needs both a source and a target split, got {self.splits}")
        if self.kind in ("Accuracy", "MSE") and not any(
                s.startswith("source") for s in self.splits):
            raise ValueError(f"{self.id} requires a source split")

    def fingerprint(self) -> str:
        blob = "|".join([
            self.kind, self.layer, ",".join(self.splits),
            self.effective_orientation, repr(self.snd_temperature),
            self.mmd_bandwidth_mode, repr(self.rankme_epsilon),
            repr(self.cluster.k), repr(self.cluster.restarts),
            repr(self.cluster.max_iters), repr(self.cluster.tol),
            repr(self.cluster.seed),
        ])
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "layer": self.layer,
            "splits": list(self.splits),
            "orientation": self.effective_orientation,
            "params": {
                "snd_temperature": self.snd_temperature,
                "mmd_bandwidth_mode": self.mmd_bandwidth_mode,
                "rankme_epsilon": self.rankme_epsilon,
                "cluster": {
                    "k": self.cluster.k,
                    "restarts": self.cluster.restarts,
                    "max_iters": self.cluster.max_iters,
                    "tol": self.cluster.tol,
                    "seed": self.cluster.seed,
                },
            },
        }

    @staticmethod
    def from_json(doc: dict) -> "ValidatorSpec":
        params = doc.get("params", {})
        cluster = params.get("cluster", {})
        spec = ValidatorSpec(
            kind=doc["kind"],
            layer=doc.get("layer", "predictions"),
            splits=tuple(doc.get("splits", ("target-val",))),
            orientation=doc.get("orientation"),
            snd_temperature=float(params.get("snd_temperature", DEFAULT_SND_TEMPERATURE)),
            mmd_bandwidth_mode=params.get("mmd_bandwidth_mode", DEFAULT_MMD_BANDWIDTH_MODE),
            rankme_epsilon=float(params.get("rankme_epsilon", DEFAULT_RANKME_EPSILON)),
            cluster=ClusterConfig(
                k=cluster.get("k"),
                restarts=int(cluster.get("restarts", 10)),
                max_iters=int(cluster.get("max_iters", 300)),
                tol=float(cluster.get("tol", 1e-4)),
                seed=int(cluster.get("seed", 0)),
            ),
            spec_id=doc.get("id"),
        )
        spec.validate()
        return spec


@dataclass
class ValidatorScore:
    checkpoint_key: str
    spec_id: str
    fingerprint: str
    raw: float
    oriented: float
    valid: bool = True

    @staticmethod
    def invalid(checkpoint_key: str, spec: ValidatorSpec) -> "ValidatorScore":
        return ValidatorScore(checkpoint_key, spec.id, spec.fingerprint(),
                              float("nan"), float("nan"), valid=False)


# ---------------------------------------------------------------------------
# Partition-comparison metrics (shared by the external clustering criteria)


def _sorted_counts_entropy(counts: np.ndarray) -> float:
    # Counts are sorted into a canonical order first so that two labelings
    # that are permutations of each other produce bitwise-equal entropies.
    c = np.sort(np.asarray(counts, dtype=np.float64).ravel())[::-1]
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log(p)).sum())


def expected_mutual_info(table: ContingencyTable) -> float:
    """Expected MI of two labelings under the permutation model."""
    a = np.sort(table.row_marginals())[::-1]
    b = np.sort(table.col_marginals())[::-1]
    n = table.n
    lg = math.lgamma
    emi = 0.0
    for ai in a.tolist():
        for bj in b.tolist():
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                weight = (lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                          - lg(n + 1) - lg(nij + 1) - lg(ai - nij + 1)
                          - lg(bj - nij + 1) - lg(n - ai - bj + nij + 1))
                emi += (nij / n) * math.log(n * nij / (ai * bj)) * math.exp(weight)
    return emi


def mutual_info(table: ContingencyTable) -> float:
    h_a = _sorted_counts_entropy(table.row_marginals())
    h_b = _sorted_counts_entropy(table.col_marginals())
    h_ab = _sorted_counts_entropy(table.counts)
    return (h_a + h_b) - h_ab


def adjusted_mutual_info(table: ContingencyTable) -> float:
    """AMI with the arithmetic-mean normalizer."""
    h_a = _sorted_counts_entropy(table.row_marginals())
    h_b = _sorted_counts_entropy(table.col_marginals())
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    mi = (h_a + h_b) - _sorted_counts_entropy(table.counts)
    emi = expected_mutual_info(table)
    denominator = 0.5 * (h_a + h_b) - emi
    numerator = mi - emi
    if denominator == 0.0:
        return 1.0 if numerator == 0.0 else 0.0
    return numerator / denominator


def adjusted_rand_index(table: ContingencyTable) -> float:
    """ARI via exact integer pair counts (perfect match gives exactly 1.0)."""
    def comb2(v: int) -> int:
        return v * (v - 1) // 2

    nij2 = sum(comb2(int(v)) for v in table.counts.ravel())
    a2 = sum(comb2(int(v)) for v in table.row_marginals())
    b2 = sum(comb2(int(v)) for v in table.col_marginals())
    n2 = comb2(table.n)
    # (nij2 - a2*b2/n2) / ((a2+b2)/2 - a2*b2/n2), scaled by 2*n2 to stay
    # in exact integers until the final division.
    numerator = 2 * n2 * nij2 - 2 * a2 * b2
    denominator = n2 * (a2 + b2) - 2 * a2 * b2
    if denominator == 0:
        return 1.0
    return numerator / denominator


def _conditional_entropy(counts: np.ndarray, conditioning_totals: np.ndarray,
                         n: float) -> float:
    # Cells are put into a canonical order so relabelings sum identically;
    # a perfect match yields exactly zero (every cell equals its total).
    cells = counts.ravel()
    totals = np.broadcast_to(conditioning_totals, counts.shape).ravel()
    mask = cells > 0
    cells, totals = cells[mask].astype(np.float64), totals[mask].astype(np.float64)
    order = np.lexsort((cells, totals))
    cells, totals = cells[order], totals[order]
    return float(-(cells / n * np.log(cells / totals)).sum())


def v_measure(table: ContingencyTable) -> float:
    """Harmonic mean of homogeneity and completeness."""
    counts = np.asarray(table.counts)
    n = float(table.n)
    a = counts.sum(axis=1)  # class sizes
    b = counts.sum(axis=0)  # cluster sizes
    h_class = _sorted_counts_entropy(a)
    h_cluster = _sorted_counts_entropy(b)
    h_class_given = _conditional_entropy(counts, b[None, :], n)
    h_cluster_given = _conditional_entropy(counts, a[:, None], n)
    homogeneity = 1.0 if h_class == 0.0 else 1.0 - h_class_given / h_class
    completeness = 1.0 if h_cluster == 0.0 else 1.0 - h_cluster_given / h_cluster
    if homogeneity + completeness == 0.0:
        return 0.0
    return 2.0 * homogeneity * completeness / (homogeneity + completeness)


def fowlkes_mallows(table: ContingencyTable) -> float:
    counts = table.counts
    n = table.n
    tk = int((counts.astype(np.int64) ** 2).sum()) - n
    pk = int((table.row_marginals().astype(np.int64) ** 2).sum()) - n
    qk = int((table.col_marginals().astype(np.int64) ** 2).sum()) - n
    if pk == 0 or qk == 0:
        return 0.0
    return tk / math.sqrt(pk * qk)


_PARTITION_METRICS = {
    "AMI": adjusted_mutual_info,
    "ARI": adjusted_rand_index,
    "VMeasure": v_measure,
    "FMI": fowlkes_mallows,
}


# ---------------------------------------------------------------------------
# Scorers


def score_accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    if labels is None:
        raise UndefinedScore("accuracy needs labels")
    predicted = np.asarray(predictions).argmax(axis=1)
    return float(np.mean(predicted == np.asarray(labels).ravel()))


def score_mse(outputs: np.ndarray, labels: np.ndarray) -> float:
    if labels is None:
        raise UndefinedScore("mse needs labels")
    out = np.asarray(outputs, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.float64)
    if out.shape != lab.shape:
        raise UndefinedScore(f"output shape {out.shape} != label shape {lab.shape}")
    return float(np.mean((out - lab) ** 2))


def score_entropy(predictions: np.ndarray) -> float:
    return float(rowwise_entropy(predictions).mean())


def score_infomax(predictions: np.ndarray) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    marginal = p.mean(axis=0)
    marginal_entropy = float(rowwise_entropy(marginal[None, :])[0])
    return marginal_entropy - float(rowwise_entropy(p).mean())


def score_bnm(predictions: np.ndarray) -> float:
    return float(singular_values(np.asarray(predictions, dtype=np.float64)).sum())


def score_snd(vectors: np.ndarray, temperature: float = DEFAULT_SND_TEMPERATURE) -> float:
    x = np.asarray(vectors, dtype=np.float64)
    if x.shape[0] < 2:
        raise UndefinedScore("soft neighbourhood density needs at least 2 rows")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    normalized = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    similarity = normalized @ normalized.T
    probs = row_softmax(similarity, temperature, exclude_diagonal=True)
    return float(rowwise_entropy(probs).mean())


def median_sqdist_bandwidth(pooled: np.ndarray) -> float:
    d2 = K.pairwise_sqdist(pooled, pooled)
    upper = d2[np.triu_indices(d2.shape[0], k=1)]
    bandwidth = float(np.median(upper))
    if bandwidth <= 0:
        raise UndefinedScore("degenerate median bandwidth (all points identical)")
    return bandwidth


def score_mmd(source: np.ndarray, target: np.ndarray,
              bandwidth_mode: str = DEFAULT_MMD_BANDWIDTH_MODE) -> float:
    """Unbiased three-term MMD^2 estimator with an RBF kernel.

    ``bandwidth_mode`` is either ``euler`` (denominator fixed at e) or
    ``median`` (median pairwise squared distance of the pooled sample).
    """
    s = np.asarray(source, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    ns, nt = s.shape[0], t.shape[0]
    if ns < 2 or nt < 2:
        raise UndefinedScore("mmd needs at least 2 samples per domain")
    if bandwidth_mode == "euler":
        bandwidth = math.e
    elif bandwidth_mode == "median":
        bandwidth = median_sqdist_bandwidth(np.vstack([s, t]))
    else:
        raise ValueError(f"unknown bandwidth mode {bandwidth_mode!r}")
    kss = rbf_kernel_matrix(s, s, bandwidth)
    ktt = rbf_kernel_matrix(t, t, bandwidth)
    kst = rbf_kernel_matrix(s, t, bandwidth)
    term_ss = (kss.sum() - np.trace(kss)) / (ns * (ns - 1))
    term_tt = (ktt.sum() - np.trace(ktt)) / (nt * (nt - 1))
    term_st = 2.0 * kst.sum() / (ns * nt)
    return float(term_ss + term_tt - term_st)


def score_coral(source: np.ndarray, target: np.ndarray) -> float:
    s = np.asarray(source, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if s.shape[1] != t.shape[1]:
        raise UndefinedScore(f"feature dims differ: {s.shape[1]} vs {t.shape[1]}")
    if s.shape[0] < 2 or t.shape[0] < 2:
        raise UndefinedScore("coral needs at least 2 samples per domain")
    d = s.shape[1]
    diff = covariance(s) - covariance(t)
    return float((diff ** 2).sum() / (4.0 * d * d))


def score_rankme(matrix: np.ndarray, epsilon: float = DEFAULT_RANKME_EPSILON) -> float:
    """Smooth rank: exp of the entropy of the normalized singular-value
    spectrum, each share bumped by ``epsilon``."""
    sv = singular_values(np.asarray(matrix, dtype=np.float64))
    total = sv.sum()
    if total <= 0:
        raise UndefinedScore("rankme is undefined for an all-zero matrix")
    shares = sv / total + epsilon
    return float(np.exp(-(shares * np.log(shares)).sum()))


def cluster_labels(matrix: np.ndarray, k: int, cfg: ClusterConfig) -> np.ndarray:
    effective = replace(cfg, k=k)
    labels, _, _ = kmeans(np.asarray(matrix, dtype=np.float64), effective)
    return labels


def score_clustering_external(matrix: np.ndarray, predicted: np.ndarray,
                              kind: str, k: int, cfg: ClusterConfig) -> float:
    if matrix.shape[0] < k:
        raise UndefinedScore(f"fewer points ({matrix.shape[0]}) than clusters ({k})")
    clusters = cluster_labels(matrix, k, cfg)
    table = contingency(predicted, clusters)
    return float(_PARTITION_METRICS[kind](table))


def _class_groups(predicted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values, inverse = np.unique(np.asarray(predicted).ravel(), return_inverse=True)
    return values, inverse


def score_silhouette(matrix: np.ndarray, predicted: np.ndarray) -> float:
    x = np.asarray(matrix, dtype=np.float64)
    values, inverse = _class_groups(predicted)
    k = values.size
    if k < 2:
        raise UndefinedScore("silhouette needs at least 2 predicted classes")
    dists = np.sqrt(K.pairwise_sqdist(x, x))
    onehot = np.zeros((x.shape[0], k))
    onehot[np.arange(x.shape[0]), inverse] = 1.0
    sums = dists @ onehot
    counts = onehot.sum(axis=0)
    n = x.shape[0]
    own = sums[np.arange(n), inverse]
    own_count = counts[inverse]
    scores = np.zeros(n)
    multi = own_count > 1
    a = np.zeros(n)
    a[multi] = own[multi] / (own_count[multi] - 1)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(n), inverse] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    valid = multi & (denom > 0)
    scores[valid] = (b[valid] - a[valid]) / denom[valid]
    return float(scores.mean())


def score_davies_bouldin(matrix: np.ndarray, predicted: np.ndarray) -> float:
    x = np.asarray(matrix, dtype=np.float64)
    values, inverse = _class_groups(predicted)
    k = values.size
    if k < 2:
        raise UndefinedScore("davies-bouldin needs at least 2 predicted classes")
    centroids = np.stack([x[inverse == c].mean(axis=0) for c in range(k)])
    spreads = np.array([
        np.sqrt(K.pairwise_sqdist(x[inverse == c], centroids[c:c + 1])[:, 0]).mean()
        for c in range(k)
    ])
    center_dists = np.sqrt(K.pairwise_sqdist(centroids, centroids))
    ratio = (spreads[:, None] + spreads[None, :]) / np.where(
        center_dists > 0, center_dists, np.nan)
    np.fill_diagonal(ratio, -np.inf)
    worst = np.nanmax(np.where(np.isnan(ratio), np.inf, ratio), axis=1)
    result = float(worst.mean())
    if not math.isfinite(result):
        raise UndefinedScore("davies-bouldin undefined (coincident centroids)")
    return result


def score_calinski_harabasz(matrix: np.ndarray, predicted: np.ndarray) -> float:
    x = np.asarray(matrix, dtype=np.float64)
    values, inverse = _class_groups(predicted)
    k = values.size
    n = x.shape[0]
    if k < 2:
        raise UndefinedScore("calinski-harabasz needs at least 2 predicted classes")
    if n <= k:
        raise UndefinedScore("calinski-harabasz needs more points than classes")
    overall = x.mean(axis=0)
    between = 0.0
    within = 0.0
    for c in range(k):
        members = x[inverse == c]
        centroid = members.mean(axis=0)
        between += members.shape[0] * float(((centroid - overall) ** 2).sum())
        within += float(((members - centroid) ** 2).sum())
    if within == 0.0:
        raise UndefinedScore("calinski-harabasz undefined (zero within-class scatter)")
    return (between / (k - 1)) / (within / (n - k))


# ---------------------------------------------------------------------------
# Spec evaluation over pack records


def check_applicable(spec: ValidatorSpec, manifest: PackManifest) -> None:
    spec.validate()
    if spec.kind == "MSE" and not manifest.regression:
        raise InapplicableValidatorError(
            f"{spec.id}: mse applies to regression packs only")
    if spec.kind == "Accuracy" and manifest.regression:
        raise InapplicableValidatorError(
            f"{spec.id}: accuracy applies to classification packs only "
            "(regression packs use mse)")
    needed_domains = {_SPLIT_LOCATION[s][0] for s in spec.splits}
    missing = needed_domains - set(manifest.domains)
    if missing:
        domain = sorted(missing)[0]
        rule = ("needs both source and target data to compute its score"
                if spec.kind in TWO_SAMPLE else
                f"is computed on the {domain} domain")
        raise InapplicableValidatorError(
            f"{spec.id}: {rule}, but a {manifest.setting} pack has no "
            f"{domain} bundles")


def _predicted_classes(predictions: np.ndarray, regression: bool) -> np.ndarray:
    if not regression:
        return np.asarray(predictions).argmax(axis=1)
    boxes = np.clip(np.asarray(predictions, dtype=np.float64), 0.0, 1.0)
    return np.asarray([discretize_bbox(*row) for row in boxes], dtype=np.int64)


class _Assembled:
    """Rows of the chosen layer pooled over the spec's splits, plus the
    matching labels/predictions rows."""

    def __init__(self, spec, manifest, reader, record, batch):
        self.source_rows: list[np.ndarray] = []
        self.target_rows: list[np.ndarray] = []
        self.label_rows: list[np.ndarray] = []
        self.prediction_rows: list[np.ndarray] = []
        self.has_labels = True
        for split in VALID_SPLITS:  # canonical pooling order
            if split not in spec.splits:
                continue
            domain, tag = _SPLIT_LOCATION[split]
            bkey = BundleKey(domain, tag, batch if manifest.setting == "TTA" else None)
            if bkey not in record.bundles:
                raise UndefinedScore(f"{record.key} has no bundle {bkey}")
            bundle = reader.bundle(record, bkey)
            layer = bundle.layer(spec.layer)
            if layer is None:
                raise UndefinedScore(
                    f"{record.key}/{bkey} is missing layer {spec.layer!r}")
            (self.source_rows if domain == "source" else self.target_rows).append(
                np.asarray(layer, dtype=np.float64))
            if bundle.predictions is not None:
                self.prediction_rows.append(
                    np.asarray(bundle.predictions, dtype=np.float64))
            if bundle.labels is None:
                self.has_labels = False
            else:
                self.label_rows.append(np.asarray(bundle.labels))

    @property
    def pooled(self) -> np.ndarray:
        return np.vstack(self.source_rows + self.target_rows)

    @property
    def labels(self) -> np.ndarray | None:
        if not self.has_labels or not self.label_rows:
            return None
        return np.concatenate([np.atleast_1d(l) for l in self.label_rows]) \
            if self.label_rows[0].ndim == 1 else np.vstack(self.label_rows)

    @property
    def predictions(self) -> np.ndarray | None:
        if not self.prediction_rows:
            return None
        return np.vstack(self.prediction_rows)


def _derived_cluster_seed(cfg: ClusterConfig, record_key: str, layer: str,
                          splits: tuple[str, ...], batch: int | None) -> int:
    # Cluster labels are a property of the validation set, so the seed hangs
    # off (record, batch, layer, splits) and all partition metrics computed
    # on the same set share one clustering.
    blob = f"{cfg.seed}|{record_key}|{layer}|{','.join(splits)}|{batch}"
    return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "little")


def evaluate(spec: ValidatorSpec, record: CheckpointRecord, reader: PackReader,
             batch: int | None = None,
             cluster_cache: dict | None = None) -> ValidatorScore:
    """Score one checkpoint under one validator spec.

    Inapplicable spec/pack combinations raise; metrics undefined for this
    particular checkpoint come back as an invalid score. ``cluster_cache``
    (optional dict) shares k-means labels across the partition metrics.
    """
    manifest = reader.manifest
    check_applicable(spec, manifest)
    key = record.key if batch is None else f"{record.key}#b{batch:04d}"
    try:
        data = _Assembled(spec, manifest, reader, record, batch)
        raw = _dispatch(spec, data, manifest, record.key, batch, cluster_cache)
    except UndefinedScore:
        return ValidatorScore.invalid(key, spec)
    if not math.isfinite(raw):
        return ValidatorScore.invalid(key, spec)
    oriented = raw if spec.effective_orientation == "higher-better" else -raw
    return ValidatorScore(key, spec.id, spec.fingerprint(), raw, oriented)


def _dispatch(spec: ValidatorSpec, data: _Assembled, manifest: PackManifest,
              record_key: str, batch: int | None,
              cluster_cache: dict | None = None) -> float:
    kind = spec.kind
    if kind == "Accuracy":
        return score_accuracy(data.pooled, data.labels)
    if kind == "MSE":
        return score_mse(data.pooled, data.labels)
    if kind == "Entropy":
        return score_entropy(data.pooled)
    if kind == "InfoMax":
        return score_infomax(data.pooled)
    if kind == "BNM":
        return score_bnm(data.pooled)
    if kind == "SND":
        return score_snd(data.pooled, spec.snd_temperature)
    if kind == "RankMe":
        return score_rankme(data.pooled, spec.rankme_epsilon)
    if kind == "MMD":
        return score_mmd(np.vstack(data.source_rows), np.vstack(data.target_rows),
                         spec.mmd_bandwidth_mode)
    if kind == "CORAL":
        return score_coral(np.vstack(data.source_rows), np.vstack(data.target_rows))

    predictions = data.predictions
    if predictions is None:
        raise UndefinedScore("clustering criteria need the predictions layer")
    predicted = _predicted_classes(predictions, manifest.regression)
    if kind in CLUSTERING_EXTERNAL:
        k = spec.cluster.k
        if k is None:
            k = (manifest.num_classes if not manifest.regression
                 else max(2, int(np.unique(predicted).size)))
        if manifest.regression and np.unique(predicted).size < 2:
            raise UndefinedScore("single predicted class on a regression pack")
        k = min(k, data.pooled.shape[0])
        seed = _derived_cluster_seed(spec.cluster, record_key, spec.layer,
                                     spec.splits, batch)
        cfg = replace(spec.cluster, seed=seed)
        cache_key = (record_key, batch, spec.layer, spec.splits, k,
                     cfg.restarts, cfg.max_iters, cfg.tol, cfg.seed)
        if cluster_cache is not None and cache_key in cluster_cache:
            clusters = cluster_cache[cache_key]
        else:
            if data.pooled.shape[0] < k:
                raise UndefinedScore(
                    f"fewer points ({data.pooled.shape[0]}) than clusters ({k})")
            clusters = cluster_labels(data.pooled, k, cfg)
            if cluster_cache is not None:
                cluster_cache[cache_key] = clusters
        table = contingency(predicted, clusters)
        return float(_PARTITION_METRICS[kind](table))
    if kind == "Silhouette":
        return score_silhouette(data.pooled, predicted)
    if kind == "DBI":
        return score_davies_bouldin(data.pooled, predicted)
    if kind == "CHI":
        return score_calinski_harabasz(data.pooled, predicted)
    raise ValueError(f"unhandled kind {kind}")


# ---------------------------------------------------------------------------
# Default validator versions per setting


def _spec(kind, layer, splits, **kw):
    return ValidatorSpec(kind=kind, layer=layer, splits=tuple(splits), **kw)


def default_specs(setting: str) -> list[ValidatorSpec]:
    """The default split/layer version of every applicable criterion for a
    pack setting."""
    sv, tt, tv = "source-val", "target-train", "target-val"
    if setting == "UDA":
        return [
            _spec("RankMe", "predictions", (sv, tv)),
            _spec("AMI", "logits", (sv, tv)),
            _spec("ARI", "logits", (sv, tv)),
            _spec("VMeasure", "logits", (sv, tv)),
            _spec("FMI", "logits", (sv, tv)),
            _spec("Silhouette", "logits", (sv, tt)),
            _spec("DBI", "logits", (sv, tv)),
            _spec("CHI", "logits", (sv, tv)),
            _spec("BNM", "predictions", (sv, tt)),
            _spec("MMD", "predictions", (sv, tv)),
            _spec("CORAL", "predictions", (sv, tv)),
            _spec("SND", "predictions", (tt,)),
            _spec("InfoMax", "predictions", (sv, tt)),
            _spec("Entropy", "predictions", (sv, tt)),
            _spec("Accuracy", "predictions", (sv,)),
        ]
    if setting == "UDA-regression":
        return [
            _spec("RankMe", "predictions", (tv,)),
            _spec("AMI", "features", (sv, tt)),
            _spec("ARI", "features", (sv, tt)),
            _spec("VMeasure", "features", (sv, tt)),
            _spec("FMI", "features", (sv, tv)),
            _spec("Silhouette", "features", (sv, tt)),
            _spec("DBI", "features", (sv, tv)),
            _spec("CHI", "logits", (sv, tt)),
            _spec("BNM", "predictions", (tt,)),
            _spec("MMD", "predictions", (sv, tv)),
            _spec("CORAL", "features", (sv, tt)),
            _spec("SND", "predictions", (tv,)),
            _spec("InfoMax", "predictions", (tt,)),
            _spec("Entropy", "predictions", (tt,)),
            _spec("MSE", "predictions", (sv,)),
        ]
    if setting == "SFDA":
        return [
            _spec("RankMe", "predictions", (tt,)),
            _spec("AMI", "features", (tt,)),
            _spec("ARI", "logits", (tv,)),
            _spec("VMeasure", "features", (tt,)),
            _spec("FMI", "features", (tt,)),
            _spec("Silhouette", "logits", (tt,)),
            _spec("DBI", "logits", (tt,)),
            _spec("CHI", "features", (tt,)),
            _spec("BNM", "predictions", (tt,)),
            _spec("SND", "predictions", (tv,)),
            _spec("InfoMax", "predictions", (tt,)),
            _spec("Entropy", "predictions", (tt,)),
        ]
    if setting == "TTA":
        return [
            _spec("RankMe", "predictions", (tt,)),
            _spec("AMI", "logits", (tt,)),
            _spec("ARI", "logits", (tt,)),
            _spec("VMeasure", "logits", (tt,)),
            _spec("FMI", "logits", (tt,)),
            _spec("Silhouette", "logits", (tt,)),
            _spec("DBI", "features", (tt,)),
            _spec("CHI", "logits", (tt,)),
            _spec("BNM", "predictions", (tt,)),
            _spec("SND", "predictions", (tt,)),
            _spec("InfoMax", "predictions", (tt,)),
            _spec("Entropy", "predictions", (tt,)),
        ]
    raise ValueError(f"unknown setting {setting!r}")
