"""Record features, logits, predictions, and labels from trained PyTorch
checkpoints into a pack directory.

The shim runs each checkpoint in inference mode over fixed-order loaders,
captures the configured feature layer with a forward hook, and writes
float32 tensors. Loader determinism is verified by checksumming the batch
stream over two passes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .packio import bundle_key, checkpoint_key, write_manifest, write_tensor

REQUIRED_SPLITS = {
    "UDA": ["source.val", "target.train", "target.val", "target.test"],
    "SFDA": ["target.train", "target.val", "target.test"],
}


class ExportError(Exception):
    pass


@dataclass
class CheckpointEntry:
    path: Path | None
    algorithm: str
    hyperparams: str
    checkpoint_index: int
    epoch: int
    is_source_only: bool = False
    paths_by_batch: dict[int, Path] | None = None  # episodic (TTA) states

    @property
    def key(self) -> str:
        return checkpoint_key(self.algorithm, self.hyperparams,
                              self.checkpoint_index)


@dataclass
class ExportSpec:
    setting: str
    num_classes: int
    feature_hook: str
    output: Path
    checkpoints: list[CheckpointEntry]
    datasets: dict[str, object]  # "domain.split[.batch]" -> loader
    batch_size: int = 64
    oracle_ref: dict = field(
        default_factory=lambda: {"domain": "target", "split": "test",
                                 "metric": "accuracy"})
    notes: dict = field(default_factory=dict)


def _load_array(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pt":
        return torch.load(path, weights_only=True).numpy()
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".csv":
        values = [int(line) for line in path.read_text().split() if line.strip()]
        return np.asarray(values, dtype=np.uint32)
    raise ExportError(f"unsupported dataset file {path}")


def _sequential_loader(inputs: np.ndarray, labels: np.ndarray | None,
                       batch_size: int):
    tensors = [torch.as_tensor(inputs, dtype=torch.float32)]
    if labels is not None:
        tensors.append(torch.as_tensor(np.asarray(labels, dtype=np.int64)))
    dataset = torch.utils.data.TensorDataset(*tensors)
    return torch.utils.data.DataLoader(dataset, batch_size=batch_size,
                                       shuffle=False)


def load_spec(config_path: Path) -> ExportSpec:
    """Build an ExportSpec from its JSON mirror. Dataset entries point at
    tensor files (.pt/.npy) with optional labels (.pt/.npy or one-column
    CSV)."""
    doc = json.loads(Path(config_path).read_text())
    root = Path(config_path).parent
    datasets = {}
    batch_size = int(doc.get("batch_size", 64))
    for key, entry in doc["datasets"].items():
        inputs = _load_array(root / entry["inputs"])
        labels = (_load_array(root / entry["labels"])
                  if entry.get("labels") else None)
        datasets[key] = _sequential_loader(inputs, labels, batch_size)
    checkpoints = []
    for entry in doc["checkpoints"]:
        paths_by_batch = None
        if "paths_by_batch" in entry:
            paths_by_batch = {int(b): root / p
                              for b, p in entry["paths_by_batch"].items()}
        checkpoints.append(CheckpointEntry(
            path=(root / entry["path"]) if "path" in entry else None,
            algorithm=entry["algorithm"],
            hyperparams=entry["hyperparams"],
            checkpoint_index=int(entry["checkpoint_index"]),
            epoch=int(entry["epoch"]),
            is_source_only=bool(entry.get("is_source_only", False)),
            paths_by_batch=paths_by_batch,
        ))
    return ExportSpec(
        setting=doc["setting"],
        num_classes=int(doc["num_classes"]),
        feature_hook=doc["feature_hook"],
        output=Path(doc["output"]) if Path(doc["output"]).is_absolute()
        else root / doc["output"],
        checkpoints=checkpoints,
        datasets=datasets,
        batch_size=batch_size,
        oracle_ref=dict(doc.get("oracle_ref", {"domain": "target",
                                               "split": "test",
                                               "metric": "accuracy"})),
        notes=dict(doc.get("notes", {})),
    )


def _stream_checksum(loader) -> str:
    digest = hashlib.sha256()
    for batch in loader:
        inputs = batch[0] if isinstance(batch, (tuple, list)) else batch
        digest.update(np.ascontiguousarray(
            inputs.detach().cpu().numpy().astype("<f4")).tobytes())
    return digest.hexdigest()


def _check_loader_determinism(name: str, loader) -> None:
    if _stream_checksum(loader) != _stream_checksum(loader):
        raise ExportError(
            f"dataset {name!r} is nondeterministic (order checksum mismatch "
            "across two passes); disable shuffling and augmentation")


def _softmax_f32(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p32 = p.astype(np.float32)
    la = logits.argmax(axis=1)
    pa = p32.argmax(axis=1)
    for i in np.nonzero(la != pa)[0]:  # float32 rounding merged a near-tie
        p32[i, la[i]], p32[i, pa[i]] = p32[i, pa[i]], p32[i, la[i]]
    return p32


def _forward_split(model: torch.nn.Module, hook_point: str, loader):
    try:
        submodule = model.get_submodule(hook_point)
    except AttributeError as exc:
        raise ExportError(f"feature hook {hook_point!r} not found") from exc
    captured: list[torch.Tensor] = []
    handle = submodule.register_forward_hook(
        lambda module, inputs, output: captured.append(output.detach()))
    features, logits, labels = [], [], []
    model.eval()
    try:
        with torch.no_grad():
            for batch in loader:
                if isinstance(batch, (tuple, list)):
                    inputs, batch_labels = batch[0], (batch[1] if len(batch) > 1
                                                      else None)
                else:
                    inputs, batch_labels = batch, None
                captured.clear()
                out = model(inputs.to(torch.float32))
                if not captured:
                    raise ExportError(
                        f"feature hook {hook_point!r} never fired")
                features.append(captured[-1].reshape(len(inputs), -1)
                                .to(torch.float32).cpu().numpy())
                logits.append(out.to(torch.float32).cpu().numpy())
                if batch_labels is not None:
                    labels.append(batch_labels.cpu().numpy())
    finally:
        handle.remove()
    feature_arr = np.vstack(features).astype(np.float32)
    logit_arr = np.vstack(logits).astype(np.float32)
    label_arr = (np.concatenate(labels).astype(np.uint32) if labels else None)
    return feature_arr, logit_arr, label_arr


def _load_model(path: Path) -> torch.nn.Module:
    model = torch.load(path, weights_only=False)
    if not isinstance(model, torch.nn.Module):
        raise ExportError(f"{path} does not contain a torch module")
    return model


def _split_layout(datasets: dict) -> dict[str, dict]:
    """domain -> {fractions, tags} reconstructed from per-split sizes."""
    sizes: dict[str, dict[str, int]] = {}
    for key, loader in datasets.items():
        parts = key.split(".")
        domain, split = parts[0], parts[1]
        n = sum(len(batch[0] if isinstance(batch, (tuple, list)) else batch)
                for batch in loader)
        sizes.setdefault(domain, {})[split] = sizes.get(domain, {}).get(split, 0) + n
    layout = {}
    for domain, per_split in sizes.items():
        tags = []
        for split in ("train", "val", "test"):
            tags.extend([split] * per_split.get(split, 0))
        total = len(tags)
        fractions = [per_split.get(split, 0) / total
                     for split in ("train", "val", "test")]
        layout[domain] = {"fractions": fractions, "tags": tags}
    return layout


def export_pack(spec: ExportSpec) -> Path:
    """Run every checkpoint over every configured (domain, split) loader and
    write a conformant pack directory."""
    if spec.setting not in ("UDA", "SFDA", "TTA"):
        raise ExportError(f"unsupported setting {spec.setting!r}")
    required = REQUIRED_SPLITS.get(spec.setting, [])
    missing = [key for key in required if key not in spec.datasets]
    if missing:
        raise ExportError(f"{spec.setting} export needs datasets {missing}")
    if spec.setting in ("SFDA", "TTA"):
        foreign = [key for key in spec.datasets if key.startswith("source")]
        if foreign:
            raise ExportError(
                f"{spec.setting} packs carry no source bundles, got {foreign}")
    for name, loader in spec.datasets.items():
        _check_loader_determinism(name, loader)

    pack = Path(spec.output)
    pack.mkdir(parents=True, exist_ok=True)
    roster = []
    for entry in spec.checkpoints:
        bundles: dict[str, list[str]] = {}
        ckpt_dir = pack / "tensors" / entry.key
        for dataset_key, loader in sorted(spec.datasets.items()):
            parts = dataset_key.split(".")
            domain, split = parts[0], parts[1]
            batch_index = int(parts[2]) if len(parts) > 2 else None
            if entry.paths_by_batch is not None:
                if batch_index is None:
                    raise ExportError(
                        f"{entry.key} has per-batch states but dataset "
                        f"{dataset_key!r} has no batch index")
                model = _load_model(entry.paths_by_batch[batch_index])
            else:
                model = _load_model(entry.path)
            features, logits, labels = _forward_split(
                model, spec.feature_hook, loader)
            predictions = _softmax_f32(logits)
            sums = predictions.astype(np.float64).sum(axis=1)
            bad = np.nonzero(np.abs(sums - 1.0) > 1e-4)[0]
            if bad.size:
                raise ExportError(
                    f"{entry.key}/{dataset_key}: prediction row {int(bad[0])} "
                    f"sums to {sums[bad[0]]:.6f}")
            bkey = bundle_key(domain, split, batch_index)
            arrays = {"features": features, "logits": logits,
                      "predictions": predictions}
            if labels is not None:
                arrays["labels"] = labels
            for layer, array in arrays.items():
                write_tensor(ckpt_dir / f"{bkey}.{layer}.davt", array)
            bundles[bkey] = sorted(arrays)
        roster.append({
            "algorithm_id": entry.algorithm,
            "hyperparams_id": entry.hyperparams,
            "checkpoint_index": entry.checkpoint_index,
            "epoch": entry.epoch,
            "is_source_only": entry.is_source_only,
            "bundles": bundles,
        })
    domains = sorted({key.split(".")[0] for key in spec.datasets},
                     key=lambda d: (d != "source", d))
    notes = {"predictions": "softmax of logits", "exporter": "davexport"}
    notes.update(spec.notes)
    write_manifest(
        pack,
        setting=spec.setting,
        num_classes=spec.num_classes,
        domains=domains,
        splits=_split_layout(spec.datasets),
        checkpoints=roster,
        oracle_ref=spec.oracle_ref,
        notes=notes,
    )
    return pack


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="davexport",
        description="Export PyTorch checkpoint outputs into a pack directory.")
    parser.add_argument("config", help="JSON export spec")
    args = parser.parse_args(argv)
    try:
        pack = export_pack(load_spec(Path(args.config)))
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"pack: {pack}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
