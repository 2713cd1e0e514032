from __future__ import annotations

import math

import numpy as np
import pytest

from davalid.datapack import BundleKey, read_pack, write_pack
from davalid.errors import DavalidError
from davalid.selection import (
    SelectionPool,
    build_pools,
    episodic_accuracy,
    oracle_metric,
    pct_over_baseline,
    select_best,
    select_episodic,
    select_oracle,
)
from conftest import make_bundle, record_with, tiny_manifest


def _manifest_with_epochs(epochs, setting="UDA", oracle_metric_name="accuracy"):
    records = [record_with({}, hyperparams=f"h{i:02d}", index=0, epoch=epoch)
               for i, epoch in enumerate(epochs)]
    manifest = tiny_manifest(records, setting=setting)
    manifest.oracle_ref["metric"] = oracle_metric_name
    return manifest, [r.key for r in records]


class TestSelectBest:
    def test_picks_max_oriented(self):
        manifest, keys = _manifest_with_epochs([0, 1, 2])
        pool = SelectionPool(candidates=keys)
        scores = dict(zip(keys, [(0.2, True), (0.9, True), (0.5, True)]))
        result = select_best(pool, manifest, scores)
        assert result.chosen_key == keys[1]
        assert result.oriented == 0.9
        assert result.ties == 1
        assert result.tie_break == "none"

    def test_tie_prefers_lowest_epoch(self):
        manifest, keys = _manifest_with_epochs([10, 5])
        pool = SelectionPool(candidates=keys)
        scores = {keys[0]: (0.7, True), keys[1]: (0.7, True)}
        result = select_best(pool, manifest, scores)
        assert result.chosen_key == keys[1]
        assert result.ties == 2
        assert result.tie_break == "epoch"

    def test_tie_on_epoch_falls_to_key(self):
        manifest, keys = _manifest_with_epochs([3, 3])
        pool = SelectionPool(candidates=keys)
        scores = {k: (1.0, True) for k in keys}
        result = select_best(pool, manifest, scores)
        assert result.chosen_key == min(keys)
        assert result.tie_break == "key"

    def test_invalid_scores_skipped(self):
        manifest, keys = _manifest_with_epochs([0, 1, 2])
        pool = SelectionPool(candidates=keys)
        scores = {keys[0]: (float("nan"), False), keys[1]: (float("nan"), False),
                  keys[2]: (-5.0, True)}
        assert select_best(pool, manifest, scores).chosen_key == keys[2]

    def test_all_invalid_errors(self):
        manifest, keys = _manifest_with_epochs([0, 1])
        pool = SelectionPool(candidates=keys)
        scores = {k: (float("nan"), False) for k in keys}
        with pytest.raises(DavalidError, match="invalid"):
            select_best(pool, manifest, scores)

    def test_monotone_transform_invariance(self, rng):
        manifest, keys = _manifest_with_epochs(list(range(6)))
        pool = SelectionPool(candidates=keys)
        raw = rng.normal(size=6)
        scores = {k: (float(v), True) for k, v in zip(keys, raw)}
        transformed = {k: (math.tanh(v) * 3 + 7, True) for k, (v, _) in scores.items()}
        assert (select_best(pool, manifest, scores).chosen_key
                == select_best(pool, manifest, transformed).chosen_key)

    def test_dominated_candidate_never_changes_selection(self, rng):
        manifest, keys = _manifest_with_epochs(list(range(5)))
        base_keys = keys[:4]
        scores = {k: (float(v), True) for k, v in zip(base_keys, rng.normal(size=4))}
        chosen = select_best(SelectionPool(candidates=base_keys), manifest, scores)
        dominated = min(v for v, _ in scores.values()) - 1.0
        scores[keys[4]] = (dominated, True)
        with_extra = select_best(SelectionPool(candidates=keys), manifest, scores)
        assert with_extra.chosen_key == chosen.chosen_key


class TestSelectOracle:
    def test_max_accuracy(self):
        manifest, keys = _manifest_with_epochs([0, 1, 2])
        metrics = dict(zip(keys, [60.0, 72.4, 70.0]))
        result = select_oracle(SelectionPool(candidates=keys), manifest, metrics)
        assert result.chosen_key == keys[1]

    def test_regression_minimizes_mse(self):
        manifest, keys = _manifest_with_epochs([0, 1], oracle_metric_name="mse")
        metrics = dict(zip(keys, [50.0, 14.38]))
        result = select_oracle(SelectionPool(candidates=keys), manifest, metrics)
        assert result.chosen_key == keys[1]

    def test_single_candidate(self):
        manifest, keys = _manifest_with_epochs([4])
        result = select_oracle(SelectionPool(candidates=keys), manifest,
                               {keys[0]: 10.0})
        assert result.chosen_key == keys[0]

    def test_missing_metric_errors(self):
        manifest, keys = _manifest_with_epochs([0, 1])
        with pytest.raises(DavalidError, match="no oracle metric"):
            select_oracle(SelectionPool(candidates=keys), manifest, {keys[0]: 1.0})


class TestPools:
    def _pack_records(self):
        bundle = make_bundle(np.array([[9.0, 0.0], [0.0, 9.0]]), labels=[0, 1])
        adapted = [record_with({BundleKey("target", "test"): bundle},
                               algorithm=f"algo{i % 2}", hyperparams=f"h{i:02d}")
                   for i in range(4)]
        source_only = record_with({BundleKey("target", "test"): bundle},
                                  algorithm="source_only", source_only=True)
        return adapted + [source_only]

    def test_pools_split_by_algorithm(self):
        records = self._pack_records()
        manifest = tiny_manifest(records)
        pools = build_pools(manifest, include_source_only=False)
        assert set(pools) == {"algo0", "algo1"}
        assert all(len(p.candidates) == 2 for p in pools.values())

    def test_source_only_appended(self):
        records = self._pack_records()
        manifest = tiny_manifest(records)
        pools = build_pools(manifest, include_source_only=True)
        so_key = records[-1].key
        for pool in pools.values():
            assert pool.candidates[-1] == so_key

    def test_source_only_wins_when_all_adapted_invalid(self):
        records = self._pack_records()
        manifest = tiny_manifest(records)
        pools = build_pools(manifest, include_source_only=True)
        pool = pools["algo0"]
        scores = {key: (float("nan"), False) for key in pool.candidates}
        scores[records[-1].key] = (0.1, True)
        assert select_best(pool, manifest, scores).chosen_key == records[-1].key

    def test_source_only_wins_when_scored_highest(self):
        records = self._pack_records()
        manifest = tiny_manifest(records)
        pools = build_pools(manifest, include_source_only=True)
        pool = pools["algo1"]
        scores = {key: (0.2, True) for key in pool.candidates}
        scores[records[-1].key] = (0.9, True)
        assert select_best(pool, manifest, scores).chosen_key == records[-1].key


class TestPctOverBaseline:
    def test_counting(self):
        assert abs(pct_over_baseline([65.0, 60.0, 70.0], 63.48) - 66.7) < 0.05

    def test_all_below(self):
        assert pct_over_baseline([10.0, 20.0], 50.0) == 0.0

    def test_reference_pool_rate(self):
        # frozen fixture: 500 recorded checkpoint accuracies, 214 above the
        # source-only baseline -> 42.8%
        baseline = 63.48
        pool = [baseline + 1.0] * 214 + [baseline - 1.0] * 286
        assert math.isclose(pct_over_baseline(pool, baseline), 42.8, abs_tol=1e-9)

    def test_empty_pool_errors(self):
        with pytest.raises(DavalidError):
            pct_over_baseline([], 1.0)


def _tta_pack(tmp_path, batch_accs_by_record, n_per_batch=4):
    """Build a tiny TTA pack where record r gets exact accuracy
    batch_accs_by_record[r][b] on batch b (via constructed predictions)."""
    from davalid.datapack import PackManifest, SplitAssignment

    n_batches = len(next(iter(batch_accs_by_record.values())))
    records = []
    for (algo, hp, idx, epoch, is_so), accs in batch_accs_by_record.items():
        bundles = {}
        for b, acc in enumerate(accs):
            correct = round(acc * n_per_batch)
            labels = np.zeros(n_per_batch, dtype=np.uint32)
            logits = np.zeros((n_per_batch, 2), dtype=np.float32)
            logits[:correct, 0] = 9.0
            logits[correct:, 1] = 9.0
            bundles[BundleKey("target", "train", b)] = make_bundle(logits, labels)
        records.append(record_with(bundles, algorithm=algo, hyperparams=hp,
                                   index=idx, epoch=epoch, source_only=is_so))
    manifest = PackManifest(
        setting="TTA", num_classes=2, domains=["target"],
        splits={"target": SplitAssignment(
            tags=["train"] * (n_per_batch * n_batches), fractions=(1.0, 0.0, 0.0))},
        checkpoints=records,
        oracle_ref={"domain": "target", "split": "train", "metric": "accuracy",
                    "per_batch": True},
    )
    pack = write_pack(manifest, records, tmp_path / "tta")
    return read_pack(pack)


class TestEpisodic:
    def test_mean_of_per_batch_accuracies(self, tmp_path):
        manifest, reader = _tta_pack(tmp_path, {
            ("algo0", "h00", 0, 0, False): [0.75, 1.0],   # best on batch 0? no:
            ("algo0", "h01", 0, 0, False): [1.0, 0.5],
        })
        keys = [r.key for r in manifest.checkpoints]
        pool = SelectionPool(candidates=keys)
        # score table: oriented score == the batch accuracy itself
        scores = {}
        for record in manifest.checkpoints:
            for b in reader.batches(record):
                acc = oracle_metric(manifest, reader, record, batch=b)
                scores[f"{record.key}#b{b:04d}"] = (acc, True)
        choices = select_episodic(pool, manifest, scores, [0, 1])
        assert choices[0].chosen_key == keys[1]
        assert choices[1].chosen_key == keys[0]
        reported = episodic_accuracy(manifest, reader, choices)
        assert math.isclose(reported, 1.0, rel_tol=1e-12)

    def test_reported_is_mean(self, tmp_path):
        manifest, reader = _tta_pack(tmp_path, {
            ("algo0", "h00", 0, 0, False): [0.75, 1.0],
        })
        pool = SelectionPool(candidates=[manifest.checkpoints[0].key])
        scores = {f"{manifest.checkpoints[0].key}#b{b:04d}": (1.0, True)
                  for b in (0, 1)}
        choices = select_episodic(pool, manifest, scores, [0, 1])
        assert math.isclose(episodic_accuracy(manifest, reader, choices),
                            (0.75 + 1.0) / 2, rel_tol=1e-12)

    def test_source_only_pool_never_errors(self, tmp_path):
        manifest, reader = _tta_pack(tmp_path, {
            ("algo0", "h00", 0, 1, False): [0.5, 0.5],
            ("source_only", "h00", 0, 0, True): [0.75, 0.75],
        })
        pools = build_pools(manifest, include_source_only=True)
        pool = pools["algo0"]
        so_key = [r.key for r in manifest.checkpoints if r.is_source_only][0]
        scores = {}
        for record in manifest.checkpoints:
            for b in (0, 1):
                valid = record.is_source_only
                scores[f"{record.key}#b{b:04d}"] = (0.3 if valid else float("nan"),
                                                    valid)
        choices = select_episodic(pool, manifest, scores, [0, 1])
        assert all(c.chosen_key == so_key for c in choices.values())

    def test_oracle_dominates_every_validator_choice(self, tmp_path):
        rng = np.random.default_rng(0)
        grid = {}
        for h in range(3):
            grid[("algo0", f"h{h:02d}", 0, h, False)] = list(
                np.round(rng.uniform(0, 1, 2) * 4) / 4)
        manifest, reader = _tta_pack(tmp_path, grid)
        pool = build_pools(manifest, include_source_only=False)["algo0"]
        batch_metrics = {b: {r.key: oracle_metric(manifest, reader, r, batch=b)
                             for r in manifest.checkpoints} for b in (0, 1)}
        oracle_choices = {b: select_oracle(pool, manifest, batch_metrics[b])
                          for b in (0, 1)}
        oracle_reported = episodic_accuracy(manifest, reader, oracle_choices)
        # exhaustive: every possible per-batch choice is dominated
        for k0 in pool.candidates:
            for k1 in pool.candidates:
                value = (batch_metrics[0][k0] + batch_metrics[1][k1]) / 2
                assert value <= oracle_reported + 1e-12

    def test_non_tta_pack_rejected(self):
        manifest, keys = _manifest_with_epochs([0])
        with pytest.raises(DavalidError, match="TTA"):
            select_episodic(SelectionPool(candidates=keys), manifest, {}, [0])
