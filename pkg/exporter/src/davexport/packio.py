"""Writer for the pack directory layout consumed by the davalid toolkit.

The on-disk contract: ``manifest.json`` plus one ``.davt`` tensor file per
(checkpoint, domain, split[, batch], layer). ``.davt`` is magic ``DAVT``,
version byte 1, dtype byte (1 = f32-LE, 2 = u32-LE), ndim byte, ndim u64-LE
dims, then the row-major payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DAVT"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U32 = 2


def write_tensor(path: Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4")
        code = DTYPE_F32
    elif arr.dtype.kind in "iu":
        arr = arr.astype("<u4")
        code = DTYPE_U32
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def bundle_key(domain: str, split: str, batch: int | None = None) -> str:
    if batch is None:
        return f"{domain}.{split}"
    return f"{domain}.{split}.{batch:04d}"


def checkpoint_key(algorithm: str, hyperparams: str, index: int) -> str:
    return f"{algorithm}__{hyperparams}__{index:04d}"


def write_manifest(pack: Path, *, setting: str, num_classes: int,
                   domains: list[str], splits: dict, checkpoints: list[dict],
                   oracle_ref: dict, notes: dict) -> None:
    doc = {
        "format_version": VERSION,
        "setting": setting,
        "num_classes": num_classes,
        "domains": domains,
        "splits": splits,
        "checkpoints": checkpoints,
        "oracle_ref": oracle_ref,
        "notes": notes,
    }
    (pack / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n")
