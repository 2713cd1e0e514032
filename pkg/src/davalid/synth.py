"""Desk-scale synthetic benchmark packs with known oracle behaviour.

Domains are shifted Gaussian class blobs; "checkpoints" are linear-softmax
classifiers whose outputs blend a well-fit solution with a degraded one
according to a per-checkpoint quality knob, optionally replaced by collapse
states (confident constant predictions) at a configurable rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datapack import (
    BundleKey,
    CheckpointRecord,
    OutputsBundle,
    PackManifest,
    SplitAssignment,
    assign_splits,
)

_BLOB_SEPARATION = 6.0
_DEG_FREQ = 3.0
_DEG_FEATURES = 16
_DEG_GAIN = 4.0
_COLLAPSE_BIAS = 12.0
_COLLAPSE_LEAK = 0.05


@dataclass
class SynthConfig:
    num_classes: int = 4
    dim: int = 8
    samples_per_domain: int = 600
    shift: float = 4.0
    cov_scale: float = 1.0
    algorithms: int = 3
    hyperparams: int = 10
    checkpoints: int = 20
    quality_profile: str = "ramp"  # "ramp" or "monotone"
    collapse_rate: float = 0.0
    seed: int = 0
    setting: str = "UDA"
    tta_batch_size: int = 64

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.samples_per_domain < 10 * self.num_classes:
            raise ValueError("need at least 10 samples per class")
        if min(self.cov_scale, self.tta_batch_size) <= 0:
            raise ValueError("scales must be positive")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")
        if not 0.0 <= self.collapse_rate <= 1.0:
            raise ValueError("collapse rate must be in [0, 1]")
        if self.quality_profile not in ("ramp", "monotone"):
            raise ValueError(f"unknown quality profile {self.quality_profile!r}")
        if self.setting not in ("UDA", "SFDA", "TTA"):
            raise ValueError(f"synth supports UDA/SFDA/TTA, not {self.setting!r}")


@dataclass
class Domain:
    x: np.ndarray
    y: np.ndarray
    splits: SplitAssignment


@dataclass
class Domains:
    source: Domain
    target: Domain
    source_means: np.ndarray
    target_means: np.ndarray


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def _sample_blobs(means, counts, cov_scale, rng):
    labels = np.repeat(np.arange(means.shape[0]), counts)
    noise = rng.standard_normal((labels.size, means.shape[1]))
    x = means[labels] + np.sqrt(cov_scale) * noise
    order = rng.permutation(labels.size)
    return x[order], labels[order]


def gen_domains(cfg: SynthConfig) -> Domains:
    """Source blobs plus a mean-shifted, covariance-scaled target copy, each
    with a 60/20/20 split."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    ss = dict(zip(
        ("means", "source", "target", "shift", "split_s", "split_t"),
        root.spawn(6)))
    rng_means = np.random.default_rng(ss["means"])
    means = rng_means.standard_normal((cfg.num_classes, cfg.dim))
    gaps = [np.linalg.norm(means[i] - means[j])
            for i in range(cfg.num_classes) for j in range(i + 1, cfg.num_classes)]
    means *= _BLOB_SEPARATION / max(min(gaps), 1e-9)

    direction = np.random.default_rng(ss["shift"]).standard_normal(cfg.dim)
    direction /= np.linalg.norm(direction)
    target_means = means + cfg.shift * direction

    n, c = cfg.samples_per_domain, cfg.num_classes
    counts = np.full(c, n // c)
    counts[: n % c] += 1
    xs, ys = _sample_blobs(means, counts, 1.0, np.random.default_rng(ss["source"]))
    xt, yt = _sample_blobs(target_means, counts, cfg.cov_scale,
                           np.random.default_rng(ss["target"]))
    source = Domain(xs, ys, assign_splits(n, seed=_seed_int(ss["split_s"])))
    target = Domain(xt, yt, assign_splits(n, seed=_seed_int(ss["split_t"])))
    return Domains(source, target, means, target_means)


def _centroid_logits(x: np.ndarray, means: np.ndarray) -> np.ndarray:
    return x @ means.T - 0.5 * (means ** 2).sum(axis=1)


@dataclass
class _DegradedHead:
    frequencies: np.ndarray
    phases: np.ndarray
    mixer: np.ndarray

    @staticmethod
    def draw(rng: np.random.Generator, dim: int, num_classes: int) -> "_DegradedHead":
        frequencies = rng.standard_normal((_DEG_FEATURES, dim)) * _DEG_FREQ
        phases = rng.uniform(0.0, 2.0 * np.pi, _DEG_FEATURES)
        mixer = rng.standard_normal((num_classes, _DEG_FEATURES)) * (
            _DEG_GAIN / np.sqrt(_DEG_FEATURES))
        return _DegradedHead(frequencies, phases, mixer)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.sin(x @ self.frequencies.T + self.phases) @ self.mixer.T


@dataclass
class _CheckpointModel:
    quality: float
    fit_means: np.ndarray
    degraded: _DegradedHead
    collapse_class: int | None = None

    def logits(self, x: np.ndarray) -> np.ndarray:
        deg = self.degraded.logits(x)
        if self.collapse_class is not None:
            out = _COLLAPSE_LEAK * deg
            out[:, self.collapse_class] += _COLLAPSE_BIAS
            return out
        return self.quality * _centroid_logits(x, self.fit_means) + \
            (1.0 - self.quality) * deg


def _softmax_f32(logits32: np.ndarray) -> np.ndarray:
    z = logits32.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p32 = p.astype(np.float32)
    # float32 rounding can merge near-ties; keep stored argmax consistent
    la = logits32.argmax(axis=1)
    pa = p32.argmax(axis=1)
    for i in np.nonzero(la != pa)[0]:
        p32[i, la[i]], p32[i, pa[i]] = p32[i, pa[i]], p32[i, la[i]]
    return p32


def _bundle(model: _CheckpointModel, x: np.ndarray, y: np.ndarray) -> OutputsBundle:
    logits = model.logits(x).astype(np.float32)
    return OutputsBundle(
        features=x.astype(np.float32),
        logits=logits,
        predictions=_softmax_f32(logits),
        labels=y.astype(np.uint32),
    )


def _quality_grid(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.algorithms, cfg.hyperparams, cfg.checkpoints)
    ramp = (np.arange(cfg.checkpoints) + 1) / cfg.checkpoints
    if cfg.quality_profile == "monotone":
        return np.broadcast_to(ramp, shape).copy()
    peaks = rng.uniform(0.25, 1.0, (cfg.algorithms, cfg.hyperparams))
    factors = np.array([[1.0, 0.9, 0.8][a % 3] for a in range(cfg.algorithms)])
    return peaks[:, :, None] * factors[:, None, None] * ramp[None, None, :]


def _collapse_grid(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.algorithms, cfg.hyperparams, cfg.checkpoints)
    mask = rng.random(shape) < cfg.collapse_rate
    classes = rng.integers(0, cfg.num_classes, shape)
    return np.where(mask, classes, -1)


def _domain_views(cfg: SynthConfig, domains: Domains) -> list[tuple[BundleKey, np.ndarray, np.ndarray]]:
    views = []
    pairs = [("target", domains.target)]
    if cfg.setting == "UDA":
        pairs.insert(0, ("source", domains.source))
    for name, domain in pairs:
        for tag in ("train", "val", "test"):
            idx = domain.splits.indices(tag)
            views.append((BundleKey(name, tag), domain.x[idx], domain.y[idx]))
    return views


def gen_checkpoints(cfg: SynthConfig, domains: Domains) -> list[CheckpointRecord]:
    """The checkpoint family plus one source-only record, with recorded
    bundles on every stored (domain, split)."""
    cfg.validate()
    family_seq = np.random.SeedSequence(cfg.seed).spawn(7)[6]
    rng = np.random.default_rng(family_seq)
    qualities = _quality_grid(cfg, rng)
    collapses = _collapse_grid(cfg, rng)
    heads = [[_DegradedHead.draw(rng, cfg.dim, cfg.num_classes)
              for _ in range(cfg.hyperparams)] for _ in range(cfg.algorithms)]
    views = _domain_views(cfg, domains)

    records = []
    for a in range(cfg.algorithms):
        for h in range(cfg.hyperparams):
            for i in range(cfg.checkpoints):
                collapse = int(collapses[a, h, i])
                model = _CheckpointModel(
                    quality=float(qualities[a, h, i]),
                    fit_means=domains.target_means,
                    degraded=heads[a][h],
                    collapse_class=None if collapse < 0 else collapse,
                )
                records.append(CheckpointRecord(
                    algorithm_id=f"algo{a}",
                    hyperparams_id=f"h{h:02d}",
                    checkpoint_index=i,
                    epoch=i,
                    bundles={bkey: _bundle(model, x, y) for bkey, x, y in views},
                ))
    source_model = _CheckpointModel(
        quality=1.0,
        fit_means=domains.source_means,
        degraded=heads[0][0],
    )
    records.append(CheckpointRecord(
        algorithm_id="source_only",
        hyperparams_id="h00",
        checkpoint_index=0,
        epoch=0,
        bundles={bkey: _bundle(source_model, x, y) for bkey, x, y in views},
        is_source_only=True,
    ))
    return records


def gen_pack(cfg: SynthConfig) -> tuple[PackManifest, list[CheckpointRecord]]:
    """Full in-memory pack for UDA or SFDA settings."""
    cfg.validate()
    if cfg.setting == "TTA":
        return gen_tta_pack(cfg)
    domains = gen_domains(cfg)
    records = gen_checkpoints(cfg, domains)
    splits = {"target": domains.target.splits}
    domain_names = ["target"]
    if cfg.setting == "UDA":
        splits["source"] = domains.source.splits
        domain_names = ["source", "target"]
    manifest = PackManifest(
        setting=cfg.setting,
        num_classes=cfg.num_classes,
        domains=domain_names,
        splits=splits,
        checkpoints=records,
        oracle_ref={"domain": "target", "split": "test", "metric": "accuracy"},
        notes={"predictions": "softmax of logits",
               "generator": "gaussian-blob synthetic", "seed": cfg.seed},
    )
    return manifest, records


def gen_tta_pack(cfg: SynthConfig) -> tuple[PackManifest, list[CheckpointRecord]]:
    """Episodic pack: the target stream is cut into batches; each record is
    one (hyperparams, update-step) state with a bundle per batch."""
    cfg.validate()
    if cfg.tta_batch_size < cfg.num_classes:
        warnings.warn("batch size below the class count degrades the "
                      "clustering criteria", stacklevel=2)
    domains = gen_domains(cfg)
    stream_x, stream_y = domains.target.x, domains.target.y
    n = stream_x.shape[0]
    bounds = list(range(0, n, cfg.tta_batch_size))
    batches = [(b, min(b + cfg.tta_batch_size, n)) for b in bounds]

    family_seq = np.random.SeedSequence(cfg.seed).spawn(7)[6]
    rng = np.random.default_rng(family_seq)
    qualities = _quality_grid(cfg, rng)
    collapses = _collapse_grid(cfg, rng)
    heads = [[_DegradedHead.draw(rng, cfg.dim, cfg.num_classes)
              for _ in range(cfg.hyperparams)] for _ in range(cfg.algorithms)]

    def batch_bundles(model):
        out = {}
        for bi, (lo, hi) in enumerate(batches):
            out[BundleKey("target", "train", bi)] = _bundle(
                model, stream_x[lo:hi], stream_y[lo:hi])
        return out

    records = []
    for a in range(cfg.algorithms):
        for h in range(cfg.hyperparams):
            for u in range(cfg.checkpoints):
                collapse = int(collapses[a, h, u])
                model = _CheckpointModel(
                    quality=float(qualities[a, h, u]),
                    fit_means=domains.target_means,
                    degraded=heads[a][h],
                    collapse_class=None if collapse < 0 else collapse,
                )
                records.append(CheckpointRecord(
                    algorithm_id=f"algo{a}",
                    hyperparams_id=f"h{h:02d}",
                    checkpoint_index=u,
                    epoch=u,
                    bundles=batch_bundles(model),
                ))
    source_model = _CheckpointModel(1.0, domains.source_means, heads[0][0])
    records.append(CheckpointRecord(
        algorithm_id="source_only",
        hyperparams_id="h00",
        checkpoint_index=0,
        epoch=0,
        bundles=batch_bundles(source_model),
        is_source_only=True,
    ))
    manifest = PackManifest(
        setting="TTA",
        num_classes=cfg.num_classes,
        domains=["target"],
        splits={"target": SplitAssignment(tags=["train"] * n, fractions=(1.0, 0.0, 0.0))},
        checkpoints=records,
        oracle_ref={"domain": "target", "split": "train", "metric": "accuracy",
                    "per_batch": True},
        notes={"predictions": "softmax of logits",
               "generator": "gaussian-blob synthetic", "seed": cfg.seed,
               "batch_size": cfg.tta_batch_size},
    )
    return manifest, records
