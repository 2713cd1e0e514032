from __future__ import annotations

import numpy as np
import pytest

from davalid.datapack import (
    BundleKey,
    CheckpointRecord,
    OutputsBundle,
    PackManifest,
    SplitAssignment,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_bundle(logits: np.ndarray, labels=None, features=None) -> OutputsBundle:
    logits = np.asarray(logits, dtype=np.float32)
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p = p / p.sum(axis=1, keepdims=True)
    return OutputsBundle(
        features=(np.asarray(features, dtype=np.float32)
                  if features is not None else logits.copy()),
        logits=logits,
        predictions=p.astype(np.float32),
        labels=None if labels is None else np.asarray(labels, dtype=np.uint32),
    )


def tiny_manifest(records: list[CheckpointRecord], setting: str = "UDA",
                  num_classes: int = 2, n: int = 4) -> PackManifest:
    tags = (["train"] * (n - 2) + ["val", "test"])
    domains = ["source", "target"] if setting in ("UDA", "UDA-regression") else ["target"]
    return PackManifest(
        setting=setting,
        num_classes=num_classes,
        domains=domains,
        splits={d: SplitAssignment(tags=list(tags)) for d in domains},
        checkpoints=records,
        oracle_ref={"domain": "target", "split": "test",
                    "metric": "mse" if setting == "UDA-regression" else "accuracy"},
    )


def record_with(bundles: dict[BundleKey, OutputsBundle], algorithm="algo0",
                hyperparams="h00", index=0, epoch=0,
                source_only=False) -> CheckpointRecord:
    return CheckpointRecord(
        algorithm_id=algorithm,
        hyperparams_id=hyperparams,
        checkpoint_index=index,
        epoch=epoch,
        bundles=bundles,
        is_source_only=source_only,
    )
