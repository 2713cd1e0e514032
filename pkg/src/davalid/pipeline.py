"""Pipeline orchestration: scoring a pack against validator specs (optionally
with a worker pool), selection over the score table, and report assembly.

Outputs are byte-deterministic: rows follow manifest/spec order and float
cells use shortest round-trip repr, so reruns and different parallelism
degrees produce identical files.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import AnalysisReport, emit_report, weighted_spearman
from .datapack import PackManifest, PackReader, read_pack
from .errors import DavalidError
from .selection import (
    build_pools,
    episodic_accuracy,
    oracle_metric,
    select_best,
    select_episodic,
    select_oracle,
)
from .validators import ValidatorSpec, check_applicable, default_specs, evaluate


class UsageError(DavalidError):
    """Flag combination that cannot apply to the given inputs."""


# ---------------------------------------------------------------------------
# Scoring


def load_specs(manifest: PackManifest, specs_path: Path | None = None,
               only: list[str] | None = None) -> list[ValidatorSpec]:
    if specs_path is None:
        specs = default_specs(manifest.setting)
    else:
        doc = json.loads(Path(specs_path).read_text())
        specs = [ValidatorSpec.from_json(entry) for entry in doc]
    ids = [spec.id for spec in specs]
    if len(set(ids)) != len(ids):
        raise UsageError(f"duplicate validator ids in spec list: {ids}")
    if only:
        unknown = set(only) - set(ids)
        if unknown:
            raise UsageError(f"unknown validator ids {sorted(unknown)}")
        specs = [spec for spec in specs if spec.id in only]
    for spec in specs:
        check_applicable(spec, manifest)
    return specs


def _score_record(reader: PackReader, record, specs) -> list[tuple]:
    manifest = reader.manifest
    rows = []
    batches = (reader.batches(record) if manifest.setting == "TTA" else [None])
    cluster_cache: dict = {}
    for batch in batches:
        for spec in specs:
            score = evaluate(spec, record, reader, batch=batch,
                             cluster_cache=cluster_cache)
            rows.append((score.checkpoint_key, score.spec_id, score.raw,
                         score.oriented, score.valid))
    return rows


_WORKER = {}


def _worker_init(pack_path: str, spec_docs: list[dict]) -> None:
    manifest, reader = read_pack(Path(pack_path))
    _WORKER["reader"] = reader
    _WORKER["specs"] = [ValidatorSpec.from_json(doc) for doc in spec_docs]


def _worker_score(record_key: str) -> list[tuple]:
    reader = _WORKER["reader"]
    record = reader.manifest.record(record_key)
    return _score_record(reader, record, _WORKER["specs"])


def compute_scores(pack_path: Path, specs: list[ValidatorSpec],
                   parallel: int = 1) -> list[tuple]:
    """Score every checkpoint under every spec. Row order is manifest
    checkpoint order x batch x spec order regardless of parallelism."""
    manifest, reader = read_pack(pack_path)
    for spec in specs:
        check_applicable(spec, manifest)
    keys = [record.key for record in manifest.checkpoints]
    if parallel <= 1:
        chunks = [_score_record(reader, manifest.record(key), specs) for key in keys]
    else:
        spec_docs = [spec.to_json() for spec in specs]
        with ProcessPoolExecutor(
                max_workers=parallel, initializer=_worker_init,
                initargs=(str(pack_path), spec_docs)) as pool:
            chunks = list(pool.map(_worker_score, keys, chunksize=8))
    return [row for chunk in chunks for row in chunk]


def write_scores_csv(rows: list[tuple], path: Path) -> None:
    lines = ["checkpoint_key,validator_id,raw,oriented,valid"]
    for key, validator_id, raw, oriented, valid in rows:
        raw_s = repr(float(raw)) if valid and math.isfinite(raw) else ""
        oriented_s = repr(float(oriented)) if valid and math.isfinite(oriented) else ""
        lines.append(f"{key},{validator_id},{raw_s},{oriented_s},{int(valid)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores_csv(path: Path) -> dict[tuple[str, str], tuple[float, float, bool]]:
    """-> {(checkpoint_key, validator_id): (raw, oriented, valid)}"""
    path = Path(path)
    if not path.is_file():
        raise DavalidError(f"missing scores CSV {path}")
    table = {}
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "checkpoint_key,validator_id,raw,oriented,valid":
        raise DavalidError(f"{path}: unexpected scores CSV header")
    for line in lines[1:]:
        key, validator_id, raw_s, oriented_s, valid_s = line.split(",")
        valid = valid_s == "1"
        raw = float(raw_s) if raw_s else float("nan")
        oriented = float(oriented_s) if oriented_s else float("nan")
        table[(key, validator_id)] = (raw, oriented, valid)
    return table


def validator_ids_in(table: dict) -> list[str]:
    seen: list[str] = []
    for _, validator_id in table:
        if validator_id not in seen:
            seen.append(validator_id)
    return seen


# ---------------------------------------------------------------------------
# Selection


def _oracle_metrics(manifest: PackManifest, reader: PackReader,
                    batch: int | None = None) -> dict[str, float]:
    return {record.key: oracle_metric(manifest, reader, record, batch=batch)
            for record in manifest.checkpoints}


def run_selection(pack_path: Path, scores: dict, include_source_only: bool,
                  episodic: bool) -> list[dict]:
    """-> rows of {algorithm, validator_id, pool, batch, chosen_key, oriented,
    metric, ties, tie_break}; includes per-algorithm oracle rows."""
    manifest, reader = read_pack(pack_path)
    if episodic and manifest.setting != "TTA":
        raise UsageError(
            f"--episodic applies to TTA packs; this pack is {manifest.setting}")
    if manifest.setting == "TTA" and not episodic:
        raise UsageError("TTA packs are selected with --episodic")
    pools = build_pools(manifest, include_source_only)
    pool_name = "adapted+SO" if include_source_only else "adapted"
    validator_ids = validator_ids_in(scores)
    rows: list[dict] = []

    if not episodic:
        metrics = _oracle_metrics(manifest, reader)
        for algorithm in sorted(pools):
            pool = pools[algorithm]
            for validator_id in validator_ids:
                per_key = {key: (scores[(key, validator_id)][1],
                                 scores[(key, validator_id)][2])
                           for key in pool.candidates
                           if (key, validator_id) in scores}
                missing = [key for key in pool.candidates if key not in per_key]
                if missing:
                    raise DavalidError(
                        f"{algorithm}/{validator_id}: no score for {missing[0]}")
                result = select_best(pool, manifest, per_key)
                rows.append({
                    "algorithm": algorithm, "validator_id": validator_id,
                    "pool": pool_name, "batch": "",
                    "chosen_key": result.chosen_key,
                    "oriented": result.oriented,
                    "metric": metrics[result.chosen_key],
                    "ties": result.ties, "tie_break": result.tie_break,
                })
            oracle_result = select_oracle(pool, manifest, metrics)
            rows.append({
                "algorithm": algorithm, "validator_id": "oracle",
                "pool": pool_name, "batch": "",
                "chosen_key": oracle_result.chosen_key,
                "oriented": oracle_result.oriented,
                "metric": metrics[oracle_result.chosen_key],
                "ties": oracle_result.ties, "tie_break": oracle_result.tie_break,
            })
        return rows

    batches = reader.batches(manifest.checkpoints[0])
    batch_metrics = {batch: _oracle_metrics(manifest, reader, batch=batch)
                     for batch in batches}
    for algorithm in sorted(pools):
        pool = pools[algorithm]
        for validator_id in validator_ids:
            per_row = {key: (value[1], value[2]) for (key, vid), value in scores.items()
                       if vid == validator_id}
            choices = select_episodic(pool, manifest, per_row, batches)
            for batch, result in sorted(choices.items()):
                rows.append({
                    "algorithm": algorithm, "validator_id": validator_id,
                    "pool": pool_name, "batch": batch,
                    "chosen_key": result.chosen_key,
                    "oriented": result.oriented,
                    "metric": batch_metrics[batch][result.chosen_key],
                    "ties": result.ties, "tie_break": result.tie_break,
                })
            reported = episodic_accuracy(manifest, reader, choices)
            rows.append({
                "algorithm": algorithm, "validator_id": validator_id,
                "pool": pool_name, "batch": "mean", "chosen_key": "",
                "oriented": float("nan"), "metric": reported,
                "ties": 0, "tie_break": "",
            })
        # oracle: per-batch argmax of batch accuracy
        oracle_choices = {}
        for batch in batches:
            oracle_choices[batch] = select_oracle(pool, manifest, batch_metrics[batch])
            rows.append({
                "algorithm": algorithm, "validator_id": "oracle",
                "pool": pool_name, "batch": batch,
                "chosen_key": oracle_choices[batch].chosen_key,
                "oriented": oracle_choices[batch].oriented,
                "metric": batch_metrics[batch][oracle_choices[batch].chosen_key],
                "ties": oracle_choices[batch].ties,
                "tie_break": oracle_choices[batch].tie_break,
            })
        reported = episodic_accuracy(manifest, reader, oracle_choices)
        rows.append({
            "algorithm": algorithm, "validator_id": "oracle",
            "pool": pool_name, "batch": "mean", "chosen_key": "",
            "oriented": float("nan"), "metric": reported,
            "ties": 0, "tie_break": "",
        })
    return rows


_SELECTION_HEADER = "algorithm,validator_id,pool,batch,chosen_key,oriented,metric,ties,tie_break"


def write_selections_csv(rows: list[dict], path: Path) -> None:
    lines = [_SELECTION_HEADER]
    for row in rows:
        oriented = row["oriented"]
        oriented_s = repr(float(oriented)) if math.isfinite(oriented) else ""
        lines.append(
            f"{row['algorithm']},{row['validator_id']},{row['pool']},{row['batch']},"
            f"{row['chosen_key']},{oriented_s},{repr(float(row['metric']))},"
            f"{row['ties']},{row['tie_break']}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_selections_csv(path: Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DavalidError(f"missing selections CSV {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != _SELECTION_HEADER:
        raise DavalidError(f"{path}: unexpected selections CSV header")
    rows = []
    for line in lines[1:]:
        (algorithm, validator_id, pool, batch, chosen_key, oriented_s, metric_s,
         ties, tie_break) = line.split(",")
        rows.append({
            "algorithm": algorithm, "validator_id": validator_id, "pool": pool,
            "batch": batch, "chosen_key": chosen_key,
            "oriented": float(oriented_s) if oriented_s else float("nan"),
            "metric": float(metric_s), "ties": int(ties), "tie_break": tie_break,
        })
    return rows


# ---------------------------------------------------------------------------
# Analysis


def _baseline_metric(manifest: PackManifest, reader: PackReader) -> float:
    source_only = [rec for rec in manifest.checkpoints if rec.is_source_only]
    if not source_only:
        # no unadapted baseline recorded: report without cell classification
        return float("nan")
    if manifest.setting == "TTA":
        batches = reader.batches(source_only[0])
        chosen = sorted(source_only, key=lambda r: r.key)[0]
        per_batch = [oracle_metric(manifest, reader, chosen, batch=b) for b in batches]
        return float(np.mean(per_batch))
    if len(source_only) > 1 and "source" in manifest.domains:
        # several source-only checkpoints: the baseline is the one with the
        # best source validation accuracy (earliest epoch, then key, on ties)
        from .datapack import BundleKey

        def source_val_acc(rec):
            bundle = reader.bundle(rec, BundleKey("source", "val"))
            predicted = np.asarray(bundle.predictions).argmax(axis=1)
            return float(np.mean(predicted == np.asarray(bundle.labels).ravel()))

        source_only.sort(key=lambda r: (-source_val_acc(r), r.epoch, r.key))
    chosen = source_only[0]
    return oracle_metric(manifest, reader, chosen)


def _correlations(manifest: PackManifest, reader: PackReader, scores: dict,
                  validator_ids: list[str], task: str,
                  weight_exponent: float, pooled: bool) -> dict:
    del pooled  # single-pack runs have one task; pooling is the same data
    if manifest.setting == "TTA":
        metrics = {}
        for record in manifest.checkpoints:
            if record.is_source_only:
                continue
            for batch in reader.batches(record):
                metrics[f"{record.key}#b{batch:04d}"] = oracle_metric(
                    manifest, reader, record, batch=batch)
    else:
        metrics = {record.key: oracle_metric(manifest, reader, record)
                   for record in manifest.checkpoints if not record.is_source_only}
    higher_better = manifest.oracle_ref["metric"] != "mse"
    out: dict[str, dict[str, tuple[float, float]]] = {}
    for validator_id in validator_ids:
        xs, ys = [], []
        for key, metric in metrics.items():
            entry = scores.get((key, validator_id))
            if entry is None or not entry[2] or not math.isfinite(entry[1]):
                continue
            xs.append(entry[1])
            ys.append(metric if higher_better else -metric)
        cell: tuple[float, float]
        try:
            cell = (weighted_spearman(xs, ys, weight_exponent),
                    weighted_spearman(xs, ys, 0.0))
        except ValueError:
            cell = (float("nan"), float("nan"))
        out[validator_id] = {task: cell}
    return out


def run_analysis(pack_path: Path, scores: dict, selections: list[dict],
                 out_dir: Path, weight_exponent: float = 2.0,
                 pooled_correlation: bool = False) -> AnalysisReport:
    manifest, reader = read_pack(pack_path)
    validator_ids = [vid for vid in validator_ids_in(scores)]
    task = Path(pack_path).name
    episodic = manifest.setting == "TTA"

    selected: dict[str, dict[str, float]] = {}
    oracle: dict[str, float] = {}
    for row in selections:
        if episodic and row["batch"] != "mean":
            continue
        if not episodic and row["batch"]:
            continue
        if row["validator_id"] == "oracle":
            oracle[row["algorithm"]] = row["metric"]
        else:
            selected.setdefault(row["algorithm"], {})[row["validator_id"]] = row["metric"]
    algorithms = sorted(selected)
    if not algorithms:
        raise DavalidError("no selection rows to analyze")
    for algorithm in algorithms:
        missing = set(validator_ids) - set(selected[algorithm])
        if missing:
            raise DavalidError(f"{algorithm}: missing cells {sorted(missing)}")
        if algorithm not in oracle:
            raise DavalidError(f"{algorithm}: missing oracle selection row")

    report = AnalysisReport(
        validators=validator_ids,
        algorithms=algorithms,
        selected=selected,
        oracle=oracle,
        baseline=_baseline_metric(manifest, reader),
        lower_better=manifest.oracle_ref["metric"] == "mse",
        correlations=_correlations(manifest, reader, scores, validator_ids, task,
                                   weight_exponent, pooled_correlation),
        metadata={"task": task, "setting": manifest.setting,
                  "correlation_aggregation": "mean over tasks",
                  "weight_exponent": weight_exponent},
    )
    emit_report(report, out_dir)
    return report
