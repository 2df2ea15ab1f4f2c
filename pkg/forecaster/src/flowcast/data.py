"""Reader for the binary flow-matrix dataset produced by the aggregation CLI.

The dataset directory contains manifest.json plus one file per split. A
split file is little-endian throughout:

  header   magic b"PFDS", version u8, reserved u8, n u16, n_cells u32,
           sample count u32, horizon count u16, then that many u16
           horizons in ascending order
  sample   target_epoch u32, then float32 blocks: current n_cells x (n+1),
           daily and weekly n_cells x (2n+1), labels n_horizons x n_cells

Labels hold raw densities; the manifest's per-cell ``scales`` map counts
into [0, 1] for model input (values are clipped: scales cover only the
epochs visible to training, so later epochs may slightly exceed them).

This module deliberately parses the files from the format contract above
rather than importing the producer package; numpy is its only dependency.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"PFDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBBHIIH")

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class SplitData:
    """All samples of one chronological split, stacked."""

    target_epochs: np.ndarray  # (N,) int64
    current: np.ndarray  # (N, L, n+1) float32
    daily: np.ndarray  # (N, L, 2n+1) float32
    weekly: np.ndarray  # (N, L, 2n+1) float32
    labels: np.ndarray  # (N, n_horizons, L) float32, raw densities

    def __len__(self) -> int:
        return self.target_epochs.shape[0]


@dataclass(frozen=True, eq=False)
class FlowDataset:
    n: int
    n_cells: int
    horizons: tuple[int, ...]
    delta_minutes: int
    scales: np.ndarray  # (L,) float64, per-cell normalization divisors
    splits: dict[str, SplitData]
    manifest: dict


def read_split(path: str | Path) -> tuple[dict, SplitData]:
    """Parses one split file; returns (header fields, samples)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise DataError(f"{path}: not a flow-matrix split file")
    _, version, _, n, n_cells, count, n_h = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    off = _HEADER.size
    horizons = struct.unpack_from(f"<{n_h}H", data, off)
    off += 2 * n_h
    cur_len = n_cells * (n + 1)
    per_len = n_cells * (2 * n + 1)
    n_floats = cur_len + 2 * per_len + n_h * n_cells
    rec_size = 4 + 4 * n_floats
    if len(data) != off + count * rec_size:
        raise DataError(
            f"{path}: length {len(data)} != header promise {off + count * rec_size}"
        )
    records = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(count, rec_size)
    target_epochs = records[:, :4].copy().view("<u4").reshape(count).astype(np.int64)
    floats = records[:, 4:].copy().view("<f4").reshape(count, n_floats)
    pos = 0
    current = floats[:, pos : pos + cur_len].reshape(count, n_cells, n + 1)
    pos += cur_len
    daily = floats[:, pos : pos + per_len].reshape(count, n_cells, 2 * n + 1)
    pos += per_len
    weekly = floats[:, pos : pos + per_len].reshape(count, n_cells, 2 * n + 1)
    pos += per_len
    labels = floats[:, pos:].reshape(count, n_h, n_cells)
    header = {"n": n, "n_cells": n_cells, "count": count, "horizons": tuple(horizons)}
    split = SplitData(
        target_epochs=target_epochs,
        current=np.ascontiguousarray(current),
        daily=np.ascontiguousarray(daily),
        weekly=np.ascontiguousarray(weekly),
        labels=np.ascontiguousarray(labels),
    )
    return header, split


def load_dataset(directory: str | Path) -> FlowDataset:
    """Loads manifest plus all splits, verifying checksums and coherence."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: {exc}") from None

    for key in ("n", "horizons", "scales", "splits"):
        if key not in manifest:
            raise DataError(f"manifest missing field {key!r}")
    horizons = tuple(int(h) for h in manifest["horizons"])
    scales = np.asarray(manifest["scales"], dtype=np.float64)
    if scales.ndim != 1 or not np.all(scales >= 1.0):
        raise DataError("manifest scales must be a vector of values >= 1")

    splits: dict[str, SplitData] = {}
    n_cells = scales.shape[0]
    for name in SPLIT_NAMES:
        if name not in manifest["splits"]:
            raise DataError(f"manifest lists no {name!r} split")
        entry = manifest["splits"][name]
        path = directory / entry["file"]
        if not path.is_file():
            raise DataError(f"split file missing: {path}")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != entry["sha256"]:
            raise DataError(f"{path}: sha256 mismatch (corrupt or stale manifest)")
        header, split = read_split(path)
        if header["n"] != manifest["n"] or header["horizons"] != horizons:
            raise DataError(f"{path}: header disagrees with manifest")
        if header["n_cells"] != n_cells:
            raise DataError(f"{path}: {header['n_cells']} cells but {n_cells} scales")
        if header["count"] != entry["samples"]:
            raise DataError(f"{path}: {header['count']} samples, manifest says {entry['samples']}")
        splits[name] = split

    # Chronological, non-overlapping splits: leakage would invalidate every
    # evaluation downstream, so refuse such datasets outright.
    for earlier, later in (("train", "val"), ("val", "test")):
        a, b = splits[earlier].target_epochs, splits[later].target_epochs
        if len(a) and len(b) and a.max() >= b.min():
            raise DataError(f"{earlier} epochs overlap {later} epochs")

    return FlowDataset(
        n=int(manifest["n"]),
        n_cells=n_cells,
        horizons=horizons,
        delta_minutes=int(manifest.get("delta_minutes", 5)),
        scales=scales,
        splits=splits,
        manifest=manifest,
    )


def normalized_inputs(split: SplitData, scales: np.ndarray) -> dict[str, np.ndarray]:
    """Scales inputs into [0, 1] and targets into scale units.

    Returns float32 arrays: current, daily, weekly (inputs, clipped),
    targets (labels / scale, unclipped), labels (raw).
    """
    div = scales.astype(np.float32)
    by_cell = div[None, :, None]
    return {
        "current": np.clip(split.current / by_cell, 0.0, 1.0),
        "daily": np.clip(split.daily / by_cell, 0.0, 1.0),
        "weekly": np.clip(split.weekly / by_cell, 0.0, 1.0),
        "targets": split.labels / div[None, None, :],
        "labels": split.labels,
    }
