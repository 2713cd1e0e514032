from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from davalid.datapack import BundleKey, read_pack, write_pack
from davalid.selection import build_pools, oracle_metric, select_oracle
from davalid.synth import (
    SynthConfig,
    _centroid_logits,
    gen_checkpoints,
    gen_domains,
    gen_pack,
    gen_tta_pack,
)


def _small_cfg(**overrides) -> SynthConfig:
    base = dict(num_classes=3, dim=4, samples_per_domain=120, algorithms=1,
                hyperparams=2, checkpoints=3, seed=3)
    base.update(overrides)
    return SynthConfig(**base)


class TestGenDomains:
    def test_no_shift_is_indistinguishable(self):
        cfg = _small_cfg(shift=0.0, cov_scale=1.0, samples_per_domain=200, seed=0)
        domains = gen_domains(cfg)
        xs = domains.source.x[:100]
        xt = domains.target.x[:100]
        bw = oracles.median_sq_distance(np.vstack([xs[:40], xt[:40]]))
        observed, threshold = oracles.mmd_permutation_threshold(
            xs[:40], xt[:40], bw, permutations=60, seed=1)
        assert observed < threshold

    def test_large_shift_degrades_source_model(self):
        cfg = _small_cfg(shift=10.0, samples_per_domain=300, seed=2)
        domains = gen_domains(cfg)
        source_acc = (_centroid_logits(domains.source.x, domains.source_means)
                      .argmax(axis=1) == domains.source.y).mean()
        target_acc = (_centroid_logits(domains.target.x, domains.source_means)
                      .argmax(axis=1) == domains.target.y).mean()
        assert target_acc <= source_acc

    def test_deterministic(self):
        cfg = _small_cfg(seed=11)
        a = gen_domains(cfg)
        b = gen_domains(cfg)
        assert np.array_equal(a.source.x, b.source.x)
        assert np.array_equal(a.target.y, b.target.y)
        assert a.target.splits.tags == b.target.splits.tags

    def test_split_shape(self):
        domains = gen_domains(_small_cfg(samples_per_domain=150))
        counts = {tag: domains.source.splits.tags.count(tag)
                  for tag in ("train", "val", "test")}
        assert counts == {"train": 90, "val": 30, "test": 30}

    def test_degenerate_config_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(num_classes=1).validate()
        with pytest.raises(ValueError):
            SynthConfig(num_classes=4, samples_per_domain=20).validate()


class TestGenCheckpoints:
    def test_high_quality_is_accurate(self):
        cfg = _small_cfg(quality_profile="monotone", samples_per_domain=400,
                         checkpoints=4, hyperparams=1, shift=6.0)
        domains = gen_domains(cfg)
        records = gen_checkpoints(cfg, domains)
        best = [r for r in records if not r.is_source_only][-1]
        preds = best.bundles[BundleKey("target", "test")].predictions
        labels = best.bundles[BundleKey("target", "test")].labels
        assert (preds.argmax(axis=1) == labels).mean() >= 0.95

    def test_zero_quality_is_chance(self):
        cfg = _small_cfg(samples_per_domain=400, hyperparams=1, checkpoints=3)
        domains = gen_domains(cfg)
        from davalid.synth import _CheckpointModel, _DegradedHead, _bundle

        head = _DegradedHead.draw(np.random.default_rng(0), cfg.dim, cfg.num_classes)
        model = _CheckpointModel(0.0, domains.target_means, head)
        bundle = _bundle(model, domains.target.x, domains.target.y)
        acc = (bundle.predictions.argmax(axis=1) == bundle.labels).mean()
        assert abs(acc - 1.0 / cfg.num_classes) <= 0.1

    def test_monotone_family_oracle_picks_last(self, tmp_path):
        # seed chosen so test accuracy rises strictly with checkpoint quality
        cfg = _small_cfg(quality_profile="monotone", checkpoints=5,
                         hyperparams=1, samples_per_domain=300, shift=6.0,
                         cov_scale=6.0, seed=6)
        manifest, records = gen_pack(cfg)
        pack = write_pack(manifest, records, tmp_path / "pack")
        manifest2, reader = read_pack(pack)
        pools = build_pools(manifest2, include_source_only=False)
        metrics = {r.key: oracle_metric(manifest2, reader, r)
                   for r in manifest2.checkpoints}
        accs = [metrics[r.key] for r in manifest2.checkpoints
                if not r.is_source_only]
        assert all(a < b for a, b in zip(accs, accs[1:]))
        result = select_oracle(pools["algo0"], manifest2, metrics)
        assert result.chosen_key.endswith("0004")

    def test_source_only_record_present(self):
        manifest, records = gen_pack(_small_cfg())
        source_only = [r for r in records if r.is_source_only]
        assert len(source_only) == 1
        assert source_only[0].epoch == 0

    def test_collapse_rate_injects_confident_constants(self):
        cfg = _small_cfg(collapse_rate=1.0, hyperparams=1, checkpoints=2)
        domains = gen_domains(cfg)
        records = gen_checkpoints(cfg, domains)
        adapted = [r for r in records if not r.is_source_only]
        for record in adapted:
            preds = record.bundles[BundleKey("target", "train")].predictions
            assert preds.max(axis=1).min() > 0.99
            assert np.unique(preds.argmax(axis=1)).size == 1

    def test_family_counts(self):
        cfg = _small_cfg(algorithms=2, hyperparams=3, checkpoints=4)
        manifest, records = gen_pack(cfg)
        assert len(records) == 2 * 3 * 4 + 1


class TestGenTtaPack:
    def test_counting(self, tmp_path):
        cfg = _small_cfg(setting="TTA", algorithms=1, hyperparams=2, checkpoints=3,
                         samples_per_domain=120, tta_batch_size=60)
        manifest, records = gen_tta_pack(cfg)
        adapted = [r for r in records if not r.is_source_only]
        assert len(adapted) == 2 * 3
        bundle_count = sum(len(r.bundles) for r in adapted)
        assert bundle_count == 12  # 2 batches x 2 hyperparams x 3 updates
        source_only = [r for r in records if r.is_source_only][0]
        assert len(source_only.bundles) == 2

    def test_source_only_batch_accuracy_matches_slices(self, tmp_path):
        cfg = _small_cfg(setting="TTA", samples_per_domain=120, tta_batch_size=40,
                         algorithms=1, hyperparams=1, checkpoints=2)
        manifest, records = gen_tta_pack(cfg)
        pack = write_pack(manifest, records, tmp_path / "tta")
        manifest2, reader = read_pack(pack)
        source_only = [r for r in manifest2.checkpoints if r.is_source_only][0]
        batches = reader.batches(source_only)
        per_batch, all_preds, all_labels = [], [], []
        for b in batches:
            bundle = reader.bundle(source_only, BundleKey("target", "train", b))
            correct = bundle.predictions.argmax(axis=1) == bundle.labels
            per_batch.append(correct)
            all_preds.append(bundle.predictions)
            all_labels.append(bundle.labels)
        stream_acc = np.concatenate(per_batch).mean()
        sliced = np.concatenate(
            [c for c in per_batch]).mean()
        assert math.isclose(stream_acc, sliced, rel_tol=1e-12)
        for b, correct in zip(batches, per_batch):
            lo = b * 40
            assert math.isclose(correct.mean(),
                                np.concatenate(per_batch)[lo:lo + 40].mean(),
                                rel_tol=1e-12)

    def test_deterministic(self):
        cfg = _small_cfg(setting="TTA", tta_batch_size=40)
        m1, r1 = gen_tta_pack(cfg)
        m2, r2 = gen_tta_pack(cfg)
        k1 = BundleKey("target", "train", 0)
        assert np.array_equal(r1[0].bundles[k1].logits, r2[0].bundles[k1].logits)

    def test_small_batch_warns(self):
        cfg = _small_cfg(setting="TTA", tta_batch_size=2)
        with pytest.warns(UserWarning, match="batch size"):
            gen_tta_pack(cfg)


class TestSourceRepresentativeness:
    def test_no_shift_source_accuracy_validator_near_oracle(self, tmp_path):
        # with no domain shift the source-validation-accuracy criterion picks
        # nearly oracle-grade checkpoints (averaged over seeds)
        from davalid.pipeline import compute_scores, load_specs, run_selection

        gaps = []
        for seed in range(20):
            cfg = SynthConfig(num_classes=3, dim=4, samples_per_domain=400,
                              algorithms=1, hyperparams=2, checkpoints=4,
                              shift=0.0, seed=seed)
            manifest, records = gen_pack(cfg)
            pack = write_pack(manifest, records, tmp_path / f"p{seed}")
            manifest2, reader = read_pack(pack)
            specs = load_specs(manifest2, only=["accuracy"])
            rows = compute_scores(pack, specs)
            scores = {(r[0], r[1]): (r[2], r[3], r[4]) for r in rows}
            selections = run_selection(pack, scores, include_source_only=False,
                                       episodic=False)
            chosen = {row["validator_id"]: row["metric"] for row in selections
                      if row["algorithm"] == "algo0"}
            gaps.append(chosen["oracle"] - chosen["accuracy"])
        assert float(np.mean(gaps)) <= 0.02
