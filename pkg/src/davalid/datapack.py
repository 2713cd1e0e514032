"""On-disk representation of benchmark runs.

A pack directory holds a JSON manifest plus one binary tensor file per
(checkpoint, domain, split[, batch], layer). Tensor files use a small
little-endian container (`.davt`): magic ``DAVT``, a version byte, a dtype
byte (1 = float32, 2 = uint32), a ndim byte, ndim u64 dims, then the
row-major payload.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PackFormatError

MAGIC = b"DAVT"
FORMAT_VERSION = 1

DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<u4")}
DTYPE_BYTES = {np.dtype("<f4"): 1, np.dtype("<u4"): 2}

SPLIT_TAGS = ("train", "val", "test")
DOMAINS = ("source", "target")
LAYERS = ("features", "logits", "predictions", "labels")
SETTINGS = ("UDA", "SFDA", "TTA", "UDA-regression")

DEFAULT_FRACTIONS = (0.60, 0.20, 0.20)

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


# ---------------------------------------------------------------------------
# Tensor files


def write_tensor(path: Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        arr = arr.astype("<f4")
    elif arr.dtype.kind in "iu":
        if arr.size and arr.min() < 0:
            raise PackFormatError(f"{path.name}: negative integer payload")
        arr = arr.astype("<u4")
    else:
        raise PackFormatError(f"{path.name}: unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack(
        "<BBB", FORMAT_VERSION, DTYPE_BYTES[arr.dtype], arr.ndim
    )
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 7 or data[:4] != MAGIC:
        raise PackFormatError(f"{path}: bad magic, not a tensor file")
    version, dtype_code, ndim = data[4], data[5], data[6]
    if version != FORMAT_VERSION:
        raise PackFormatError(f"{path}: unsupported format version {version}")
    if dtype_code not in DTYPE_CODES:
        raise PackFormatError(f"{path}: unknown dtype code {dtype_code}")
    offset = 7 + 8 * ndim
    if len(data) < offset:
        raise PackFormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", data, 7)
    dtype = DTYPE_CODES[dtype_code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = offset + count * dtype.itemsize
    if len(data) != expected:
        raise PackFormatError(
            f"{path}: payload size {len(data) - offset} does not match shape {shape}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return arr.reshape(shape)


def labels_csv_to_array(path: Path) -> np.ndarray:
    """Read a one-column CSV of integer labels (ingest alternative)."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(int(line))
        except ValueError as exc:
            raise PackFormatError(f"{path}:{lineno}: not an integer label") from exc
    if not values:
        raise PackFormatError(f"{path}: empty label CSV")
    if min(values) < 0:
        raise PackFormatError(f"{path}: negative label")
    return np.asarray(values, dtype=np.uint32)


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class OutputsBundle:
    """Recorded arrays of one checkpoint on one data split."""

    features: np.ndarray | None = None
    logits: np.ndarray | None = None
    predictions: np.ndarray | None = None
    labels: np.ndarray | None = None

    def layer(self, name: str) -> np.ndarray | None:
        return getattr(self, name)

    def present_layers(self) -> list[str]:
        return [name for name in LAYERS if getattr(self, name) is not None]

    @property
    def n(self) -> int:
        for name in LAYERS:
            arr = getattr(self, name)
            if arr is not None:
                return int(arr.shape[0])
        return 0

    def validate(self, num_classes: int | None = None, regression: bool = False,
                 where: str = "bundle") -> None:
        ns = {name: getattr(self, name).shape[0]
              for name in LAYERS if getattr(self, name) is not None}
        if not ns:
            raise PackFormatError(f"{where}: empty bundle")
        if len(set(ns.values())) > 1:
            raise PackFormatError(f"{where}: row-count mismatch across layers {ns}")
        if self.logits is not None and self.predictions is not None:
            if self.logits.shape != self.predictions.shape:
                raise PackFormatError(
                    f"{where}: logits shape {self.logits.shape} != "
                    f"predictions shape {self.predictions.shape}"
                )
        if regression:
            return
        if self.predictions is not None:
            preds = np.asarray(self.predictions, dtype=np.float64)
            if preds.size and preds.min() < 0:
                row = int(np.argwhere(preds < 0)[0][0])
                raise PackFormatError(f"{where}: negative prediction in row {row}")
            sums = preds.sum(axis=1)
            bad = np.nonzero(np.abs(sums - 1.0) > 1e-4)[0]
            if bad.size:
                raise PackFormatError(
                    f"{where}: predictions row {int(bad[0])} sums to "
                    f"{sums[bad[0]]:.6f}, expected 1"
                )
            if self.logits is not None:
                diff = np.nonzero(
                    preds.argmax(axis=1) != np.asarray(self.logits).argmax(axis=1)
                )[0]
                if diff.size:
                    raise PackFormatError(
                        f"{where}: logits/predictions argmax disagree in row {int(diff[0])}"
                    )
        if self.labels is not None and self.labels.ndim == 1:
            if num_classes is not None and self.labels.size:
                top = int(self.labels.max())
                if top >= num_classes:
                    raise PackFormatError(
                        f"{where}: label {top} out of range for {num_classes} classes"
                    )


@dataclass
class SplitAssignment:
    """Per-example split tags for one domain."""

    tags: list[str]
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def indices(self, tag: str) -> np.ndarray:
        return np.asarray([i for i, t in enumerate(self.tags) if t == tag], dtype=np.int64)

    def validate(self, where: str = "splits") -> None:
        bad = [t for t in self.tags if t not in SPLIT_TAGS]
        if bad:
            raise PackFormatError(f"{where}: unknown split tag {bad[0]!r}")


def assign_splits(n: int, fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
                  seed: int = 0) -> SplitAssignment:
    """Randomly partition ``n`` indices into train/val/test.

    Sizes are the floor of each proportion, with all remainders going to the
    train split; a deterministic permutation for the given seed assigns tags.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} do not sum to 1")
    if n < 3:
        raise ValueError(f"n={n} cannot populate three splits")
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"n={n} with fractions {fractions} leaves an empty split")
    order = np.random.default_rng(seed).permutation(n)
    tags = [""] * n
    for pos, idx in enumerate(order):
        if pos < n_train:
            tags[idx] = "train"
        elif pos < n_train + n_val:
            tags[idx] = "val"
        else:
            tags[idx] = "test"
    return SplitAssignment(tags=tags, fractions=tuple(fractions))


def discretize_bbox(x1: float, y1: float, x2: float, y2: float) -> int:
    """Map box coordinates in [0, 1] to one of 8^4 = 4096 classes.

    Each coordinate is binned into 8 uniform bins (1.0 clamps into the top
    bin) and the bins combine positionally: ``q(x1) + 8 q(y1) + 64 q(x2) +
    512 q(y2)``.
    """
    coords = (x1, y1, x2, y2)
    for value in coords:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"coordinate {value} outside [0, 1]")
    qs = [min(int(v * 8), 7) for v in coords]
    return qs[0] + 8 * qs[1] + 64 * qs[2] + 512 * qs[3]


@dataclass(frozen=True)
class BundleKey:
    domain: str
    split: str
    batch: int | None = None

    def __str__(self) -> str:
        if self.batch is None:
            return f"{self.domain}.{self.split}"
        return f"{self.domain}.{self.split}.{self.batch:04d}"

    @staticmethod
    def parse(text: str) -> "BundleKey":
        parts = text.split(".")
        if len(parts) == 2:
            return BundleKey(parts[0], parts[1])
        if len(parts) == 3:
            return BundleKey(parts[0], parts[1], int(parts[2]))
        raise PackFormatError(f"bad bundle key {text!r}")


@dataclass
class CheckpointRecord:
    """Identity of one trained-model snapshot plus its recorded bundles.

    ``bundles`` maps BundleKey -> OutputsBundle (in-memory, for writing) or
    -> list of layer names (manifest roster, for reading).
    """

    algorithm_id: str
    hyperparams_id: str
    checkpoint_index: int
    epoch: int
    bundles: dict = field(default_factory=dict)
    is_source_only: bool = False

    @property
    def key(self) -> str:
        return f"{self.algorithm_id}__{self.hyperparams_id}__{self.checkpoint_index:04d}"

    def validate_identity(self) -> None:
        for name, value in (("algorithm_id", self.algorithm_id),
                            ("hyperparams_id", self.hyperparams_id)):
            if not _ID_RE.match(value):
                raise PackFormatError(
                    f"{name} {value!r} must match [A-Za-z0-9_-]+"
                )
        if self.epoch < 0:
            raise PackFormatError(f"{self.key}: negative epoch")


@dataclass
class PackManifest:
    setting: str
    num_classes: int
    domains: list[str]
    splits: dict[str, SplitAssignment]
    checkpoints: list[CheckpointRecord]
    oracle_ref: dict
    notes: dict = field(default_factory=dict)

    @property
    def regression(self) -> bool:
        return self.setting == "UDA-regression"

    def record(self, key: str) -> CheckpointRecord:
        for rec in self.checkpoints:
            if rec.key == key:
                return rec
        raise KeyError(key)

    def validate(self) -> None:
        if self.setting not in SETTINGS:
            raise PackFormatError(f"unknown setting {self.setting!r}")
        if self.num_classes < 2:
            raise PackFormatError("num_classes must be >= 2")
        for domain in self.domains:
            if domain not in DOMAINS:
                raise PackFormatError(f"unknown domain {domain!r}")
        if self.setting in ("SFDA", "TTA") and "source" in self.domains:
            raise PackFormatError(f"{self.setting} packs carry no source bundles")
        for domain, assignment in self.splits.items():
            assignment.validate(where=f"splits[{domain}]")
        seen = set()
        for rec in self.checkpoints:
            rec.validate_identity()
            ident = (rec.algorithm_id, rec.hyperparams_id, rec.checkpoint_index)
            if ident in seen:
                raise PackFormatError(f"duplicate checkpoint key {rec.key}")
            seen.add(ident)
            for bkey in rec.bundles:
                if bkey.domain not in self.domains:
                    raise PackFormatError(
                        f"{rec.key}: bundle domain {bkey.domain!r} not in pack domains"
                    )
                is_tta = self.setting == "TTA"
                if is_tta and bkey.batch is None:
                    raise PackFormatError(f"{rec.key}: TTA bundles must carry a batch index")
                if not is_tta and bkey.batch is not None:
                    raise PackFormatError(f"{rec.key}: batch index on a non-TTA record")


# ---------------------------------------------------------------------------
# Pack IO


def _manifest_to_json(manifest: PackManifest) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "setting": manifest.setting,
        "num_classes": manifest.num_classes,
        "domains": list(manifest.domains),
        "splits": {
            domain: {"fractions": list(assignment.fractions), "tags": assignment.tags}
            for domain, assignment in manifest.splits.items()
        },
        "checkpoints": [
            {
                "algorithm_id": rec.algorithm_id,
                "hyperparams_id": rec.hyperparams_id,
                "checkpoint_index": rec.checkpoint_index,
                "epoch": rec.epoch,
                "is_source_only": rec.is_source_only,
                "bundles": {
                    str(bkey): sorted(layers) for bkey, layers in sorted(
                        ((k, v) for k, v in rec.bundles.items()),
                        key=lambda item: str(item[0]),
                    )
                },
            }
            for rec in manifest.checkpoints
        ],
        "oracle_ref": manifest.oracle_ref,
        "notes": manifest.notes,
    }


def _manifest_from_json(doc: dict) -> PackManifest:
    try:
        splits = {
            domain: SplitAssignment(tags=list(spec["tags"]),
                                    fractions=tuple(spec["fractions"]))
            for domain, spec in doc["splits"].items()
        }
        checkpoints = []
        for entry in doc["checkpoints"]:
            bundles = {
                BundleKey.parse(text): list(layers)
                for text, layers in entry["bundles"].items()
            }
            checkpoints.append(CheckpointRecord(
                algorithm_id=entry["algorithm_id"],
                hyperparams_id=entry["hyperparams_id"],
                checkpoint_index=int(entry["checkpoint_index"]),
                epoch=int(entry["epoch"]),
                bundles=bundles,
                is_source_only=bool(entry["is_source_only"]),
            ))
        return PackManifest(
            setting=doc["setting"],
            num_classes=int(doc["num_classes"]),
            domains=list(doc["domains"]),
            splits=splits,
            checkpoints=checkpoints,
            oracle_ref=dict(doc["oracle_ref"]),
            notes=dict(doc.get("notes", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PackFormatError(f"malformed manifest: {exc}") from exc


def write_pack(manifest: PackManifest, records: list[CheckpointRecord],
               path: Path) -> Path:
    """Write a pack directory. ``records`` carry in-memory OutputsBundles;
    the stored manifest lists layer names only."""
    path = Path(path)
    roster = []
    for rec in records:
        entry = CheckpointRecord(
            algorithm_id=rec.algorithm_id,
            hyperparams_id=rec.hyperparams_id,
            checkpoint_index=rec.checkpoint_index,
            epoch=rec.epoch,
            is_source_only=rec.is_source_only,
            bundles={bkey: bundle.present_layers()
                     for bkey, bundle in rec.bundles.items()},
        )
        roster.append(entry)
    stored = PackManifest(
        setting=manifest.setting,
        num_classes=manifest.num_classes,
        domains=manifest.domains,
        splits=manifest.splits,
        checkpoints=roster,
        oracle_ref=manifest.oracle_ref,
        notes=manifest.notes,
    )
    stored.validate()
    for rec in records:
        for bkey, bundle in rec.bundles.items():
            bundle.validate(num_classes=manifest.num_classes,
                            regression=manifest.regression,
                            where=f"{rec.key}/{bkey}")
    path.mkdir(parents=True, exist_ok=True)
    for rec in records:
        ckpt_dir = path / "tensors" / rec.key
        for bkey, bundle in rec.bundles.items():
            for layer in bundle.present_layers():
                write_tensor(ckpt_dir / f"{bkey}.{layer}.davt", bundle.layer(layer))
    (path / "manifest.json").write_text(
        json.dumps(_manifest_to_json(stored), sort_keys=True, indent=2) + "\n"
    )
    return path


class PackReader:
    """Lazy bundle accessor over a pack directory.

    Loaded bundles are immutable arrays; instances are safe to share across
    parallel scoring tasks.
    """

    def __init__(self, path: Path, manifest: PackManifest):
        self.path = Path(path)
        self.manifest = manifest

    def bundle(self, record: CheckpointRecord, bkey: BundleKey) -> OutputsBundle:
        layers = record.bundles.get(bkey)
        if layers is None:
            raise PackFormatError(f"{record.key}: no bundle {bkey}")
        arrays = {}
        for layer in layers:
            arr = read_tensor(self.path / "tensors" / record.key / f"{bkey}.{layer}.davt")
            arr.flags.writeable = False
            arrays[layer] = arr
        bundle = OutputsBundle(**{layer: arrays.get(layer) for layer in LAYERS})
        bundle.validate(num_classes=self.manifest.num_classes,
                        regression=self.manifest.regression,
                        where=f"{record.key}/{bkey}")
        return bundle

    def batches(self, record: CheckpointRecord) -> list[int]:
        return sorted({bkey.batch for bkey in record.bundles if bkey.batch is not None})


def read_pack(path: Path) -> tuple[PackManifest, PackReader]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise PackFormatError(f"{path}: not a pack directory (missing manifest.json)")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise PackFormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    manifest = _manifest_from_json(doc)
    manifest.validate()
    return manifest, PackReader(path, manifest)


def validate_pack(path: Path) -> list[str]:
    """Full lint: load every bundle of every checkpoint, re-checking all
    invariants. Returns a list of human-readable problems (empty = clean)."""
    problems: list[str] = []
    try:
        manifest, reader = read_pack(path)
    except PackFormatError as exc:
        return [str(exc)]
    for rec in manifest.checkpoints:
        for bkey in rec.bundles:
            try:
                reader.bundle(rec, bkey)
            except PackFormatError as exc:
                problems.append(str(exc))
    return problems
