"""Checkpoint selection over scored pools: validator-driven argmax over
oriented scores, the oracle upper bound, and the episodic per-batch variant
for TTA packs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datapack import BundleKey, CheckpointRecord, PackManifest, PackReader
from .errors import DavalidError


@dataclass
class SelectionPool:
    candidates: list[str]  # checkpoint keys
    include_source_only: bool = False


@dataclass
class SelectionResult:
    chosen_key: str
    oriented: float
    ties: int
    tie_break: str  # "none", "epoch", or "key"


def build_pools(manifest: PackManifest, include_source_only: bool) -> dict[str, SelectionPool]:
    """One pool per adaptation algorithm; "+SO" pools append the source-only
    records."""
    pools: dict[str, SelectionPool] = {}
    source_only = [rec.key for rec in manifest.checkpoints if rec.is_source_only]
    for rec in manifest.checkpoints:
        if rec.is_source_only:
            continue
        pool = pools.setdefault(
            rec.algorithm_id, SelectionPool([], include_source_only))
        pool.candidates.append(rec.key)
    if include_source_only:
        for pool in pools.values():
            pool.candidates.extend(source_only)
    for name, pool in pools.items():
        if not pool.candidates:
            raise DavalidError(f"empty selection pool for {name}")
    return pools


def _pick(manifest: PackManifest, scored: list[tuple[str, float]]) -> SelectionResult:
    """Argmax over (key, oriented) with ties broken by lowest epoch, then
    lexicographic key."""
    if not scored:
        raise DavalidError("all candidates have invalid scores")
    best = max(score for _, score in scored)
    tied = [key for key, score in scored if score == best]
    if len(tied) == 1:
        return SelectionResult(tied[0], best, 1, "none")
    epochs = {key: manifest.record(key).epoch for key in tied}
    lowest = min(epochs.values())
    by_epoch = sorted(key for key in tied if epochs[key] == lowest)
    rule = "epoch" if len(by_epoch) < len(tied) else "key"
    return SelectionResult(by_epoch[0], best, len(tied), rule)


def select_best(pool: SelectionPool, manifest: PackManifest,
                scores: dict[str, tuple[float, bool]]) -> SelectionResult:
    """Validator-driven selection: maximal oriented score among candidates
    with valid scores.

    ``scores`` maps checkpoint key -> (oriented, valid).
    """
    scored = []
    for key in pool.candidates:
        if key not in scores:
            raise DavalidError(f"candidate {key} has no score")
        oriented, valid = scores[key]
        if valid and math.isfinite(oriented):
            scored.append((key, oriented))
    return _pick(manifest, scored)


def oracle_metric(manifest: PackManifest, reader: PackReader,
                  record: CheckpointRecord, batch: int | None = None) -> float:
    """The held-out test metric of one checkpoint: accuracy for
    classification packs, MSE for regression packs."""
    ref = manifest.oracle_ref
    bkey = BundleKey(ref["domain"], ref["split"], batch)
    bundle = reader.bundle(record, bkey)
    if bundle.labels is None:
        raise DavalidError(f"{record.key}/{bkey}: oracle split has no labels")
    if ref["metric"] == "accuracy":
        predicted = np.asarray(bundle.predictions).argmax(axis=1)
        return float(np.mean(predicted == np.asarray(bundle.labels).ravel()))
    if ref["metric"] == "mse":
        out = np.asarray(bundle.predictions, dtype=np.float64)
        lab = np.asarray(bundle.labels, dtype=np.float64)
        return float(np.mean((out - lab) ** 2))
    raise DavalidError(f"unknown oracle metric {ref['metric']!r}")


def select_oracle(pool: SelectionPool, manifest: PackManifest,
                  metrics: dict[str, float]) -> SelectionResult:
    """Selection by the held-out test metric itself (the unavailable-in-
    deployment upper bound). Maximizes accuracy, minimizes MSE."""
    higher_better = manifest.oracle_ref["metric"] != "mse"
    scored = []
    for key in pool.candidates:
        if key not in metrics:
            raise DavalidError(f"candidate {key} has no oracle metric")
        value = metrics[key]
        scored.append((key, value if higher_better else -value))
    return _pick(manifest, scored)


def select_episodic(pool: SelectionPool, manifest: PackManifest,
                    scores: dict[str, tuple[float, bool]],
                    batches: list[int]) -> dict[int, SelectionResult]:
    """Per-batch selection on a TTA pack.

    ``scores`` is keyed by "<checkpoint>#b<batch>" rows. Returns one
    SelectionResult per batch index.
    """
    if manifest.setting != "TTA":
        raise DavalidError(f"episodic selection needs a TTA pack, got {manifest.setting}")
    results: dict[int, SelectionResult] = {}
    for batch in batches:
        scored = []
        for key in pool.candidates:
            row_key = f"{key}#b{batch:04d}"
            if row_key not in scores:
                raise DavalidError(f"candidate {row_key} has no score")
            oriented, valid = scores[row_key]
            if valid and math.isfinite(oriented):
                scored.append((key, oriented))
        results[batch] = _pick(manifest, scored)
    return results


def episodic_accuracy(manifest: PackManifest, reader: PackReader,
                      choices: dict[int, SelectionResult],
                      weight_by_batch_size: bool = False) -> float:
    """Reported TTA accuracy: mean over batches of the chosen state's
    accuracy on its own batch (optionally weighted by batch size)."""
    accs, weights = [], []
    for batch, result in sorted(choices.items()):
        record = manifest.record(result.chosen_key)
        accs.append(oracle_metric(manifest, reader, record, batch=batch))
        bkey = BundleKey(manifest.oracle_ref["domain"], manifest.oracle_ref["split"], batch)
        weights.append(reader.bundle(record, bkey).n)
    if not accs:
        raise DavalidError("no batches selected")
    if weight_by_batch_size:
        return float(np.average(accs, weights=weights))
    return float(np.mean(accs))


def pct_over_baseline(pool_metrics: list[float], baseline: float) -> float:
    """Percentage of pool checkpoints strictly outperforming the baseline."""
    if not pool_metrics:
        raise DavalidError("empty pool")
    above = sum(1 for value in pool_metrics if value > baseline)
    return 100.0 * above / len(pool_metrics)
