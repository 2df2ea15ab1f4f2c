"""Spatiotemporal flow matrices and the forecaster dataset export.

For a target epoch ts, three windows are cut from the density series
(columns ordered oldest to newest):

  current: cells x (n+1) over epochs ts-n .. ts;
  daily:   cells x (2n+1) centered on the same moment one day earlier,
           epochs td-n .. td+n with td = ts - epochs_per_day;
  weekly:  the same around tw = ts - epochs_per_week.

Labels are the raw future density vectors at ts+h for each horizon h.
Matrices carry raw integer counts; per-cell normalization scales are
computed from the training split only and carried in the manifest for the
consumer to apply, keeping this side integer-exact.

Binary dataset format (all little-endian): header = magic "PFDS", u8
version, u8 reserved, u16 n, u32 cells, u32 sample_count, u16 horizon
count, u16 per horizon; then per sample: u32 target_epoch followed by f32
tensors in row-major order: current (cells x (n+1)), daily (cells x
(2n+1)), weekly (cells x (2n+1)), labels (horizons x cells).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .aggregator import DensitySeries
from .errors import ConfigError, DecodeError, EmptySplit, SeriesTooShort
from .grid import GridSpec

MAGIC = b"PFDS"
FORMAT_VERSION = 1
MINUTES_PER_DAY = 24 * 60


@dataclass(frozen=True)
class WindowConfig:
    n: int = 15
    delta_minutes: int = 5
    horizons: tuple[int, ...] = (1, 3, 6, 12)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("window half-width n must be >= 1")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be positive")
        if len(set(self.horizons)) != len(self.horizons):
            raise ConfigError("horizons must be distinct")
        if self.delta_minutes < 1 or MINUTES_PER_DAY % self.delta_minutes:
            raise ConfigError(
                f"delta_minutes must divide {MINUTES_PER_DAY} evenly, got {self.delta_minutes}"
            )

    @property
    def day_epochs(self) -> int:
        return MINUTES_PER_DAY // self.delta_minutes

    @property
    def week_epochs(self) -> int:
        return 7 * self.day_epochs


@dataclass(frozen=True, eq=False)
class FlowMatrices:
    """One training sample: input windows plus per-horizon label vectors.

    daily and weekly are None when the series is too short to reach back
    one day / one week from the target epoch.
    """

    target_epoch: int
    current: np.ndarray
    daily: np.ndarray | None
    weekly: np.ndarray | None
    labels: dict[int, np.ndarray]

    @property
    def complete(self) -> bool:
        return self.daily is not None and self.weekly is not None


def build_windows(series: DensitySeries, cfg: WindowConfig) -> Iterator[FlowMatrices]:
    """Yields a sample per admissible target epoch, oldest first.

    A target is admissible when the current window and every horizon label
    exist; daily and weekly windows are attached when reachable. Raises
    SeriesTooShort when no target is admissible at all.
    """
    if series.delta_minutes != cfg.delta_minutes:
        raise ConfigError("window config delta does not match series delta")
    counts = series.counts()
    t_total = counts.shape[0]
    max_h = max(cfg.horizons)
    first = cfg.n
    last = t_total - 1 - max_h
    if last < first:
        raise SeriesTooShort(
            f"series of {t_total} epochs yields no sample with n={cfg.n}, max horizon {max_h}"
        )
    start_epoch = series.start_epoch or 0
    day, week = cfg.day_epochs, cfg.week_epochs
    for ts in range(first, last + 1):
        current = counts[ts - cfg.n : ts + 1].T.copy()
        daily = None
        if ts - day - cfg.n >= 0:
            daily = counts[ts - day - cfg.n : ts - day + cfg.n + 1].T.copy()
        weekly = None
        if ts - week - cfg.n >= 0:
            weekly = counts[ts - week - cfg.n : ts - week + cfg.n + 1].T.copy()
        labels = {h: counts[ts + h].copy() for h in cfg.horizons}
        yield FlowMatrices(
            target_epoch=start_epoch + ts,
            current=current,
            daily=daily,
            weekly=weekly,
            labels=labels,
        )


def _write_split(
    path: Path, samples: list[FlowMatrices], cfg: WindowConfig, n_cells: int
) -> str:
    horizons = sorted(cfg.horizons)
    header = struct.pack(
        f"<4sBBHII H{len(horizons)}H".replace(" ", ""),
        MAGIC,
        FORMAT_VERSION,
        0,
        cfg.n,
        n_cells,
        len(samples),
        len(horizons),
        *horizons,
    )
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        fh.write(header)
        digest.update(header)
        for s in samples:
            record = struct.pack("<I", s.target_epoch)
            record += np.ascontiguousarray(s.current, dtype="<f4").tobytes()
            record += np.ascontiguousarray(s.daily, dtype="<f4").tobytes()
            record += np.ascontiguousarray(s.weekly, dtype="<f4").tobytes()
            label_block = np.stack([s.labels[h] for h in horizons])
            record += np.ascontiguousarray(label_block, dtype="<f4").tobytes()
            fh.write(record)
            digest.update(record)
    return digest.hexdigest()


def read_dataset(path: str | Path) -> dict:
    """Reads one split back into stacked arrays (inverse of the writer)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DecodeError("bad dataset magic")
    version, _, n, n_cells, count, n_h = struct.unpack_from("<BBHIIH", data, 4)
    if version != FORMAT_VERSION:
        raise DecodeError(f"unsupported dataset version {version}")
    off = 18
    horizons = list(struct.unpack_from(f"<{n_h}H", data, off))
    off += 2 * n_h
    cur_len, per_len = n_cells * (n + 1), n_cells * (2 * n + 1)
    sample_floats = cur_len + 2 * per_len + n_h * n_cells
    expected = off + count * (4 + 4 * sample_floats)
    if len(data) != expected:
        raise DecodeError(f"dataset length {len(data)} != expected {expected}")
    target_epochs = np.empty(count, dtype=np.int64)
    current = np.empty((count, n_cells, n + 1), dtype=np.float32)
    daily = np.empty((count, n_cells, 2 * n + 1), dtype=np.float32)
    weekly = np.empty((count, n_cells, 2 * n + 1), dtype=np.float32)
    labels = np.empty((count, n_h, n_cells), dtype=np.float32)
    for i in range(count):
        (target_epochs[i],) = struct.unpack_from("<I", data, off)
        off += 4
        flat = np.frombuffer(data, dtype="<f4", count=sample_floats, offset=off)
        off += 4 * sample_floats
        pos = 0
        current[i] = flat[pos : pos + cur_len].reshape(n_cells, n + 1)
        pos += cur_len
        daily[i] = flat[pos : pos + per_len].reshape(n_cells, 2 * n + 1)
        pos += per_len
        weekly[i] = flat[pos : pos + per_len].reshape(n_cells, 2 * n + 1)
        pos += per_len
        labels[i] = flat[pos:].reshape(n_h, n_cells)
    return {
        "n": n,
        "n_cells": n_cells,
        "horizons": horizons,
        "target_epochs": target_epochs,
        "current": current,
        "daily": daily,
        "weekly": weekly,
        "labels": labels,
    }


def export_dataset(
    series: DensitySeries,
    cfg: WindowConfig,
    fractions: tuple[float, float, float],
    out_dir: str | Path,
    source: dict | None = None,
) -> dict:
    """Writes chronological train/val/test splits plus manifest.json.

    Only samples with all three windows are exported (the file format is
    fixed-layout). Returns the manifest dict.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError("split fractions must be positive and sum to 1")
    samples = [s for s in build_windows(series, cfg) if s.complete]
    if not samples:
        raise SeriesTooShort(
            "series too short for daily/weekly windows; need more than "
            f"{cfg.week_epochs + cfg.n} epochs"
        )
    n_total = len(samples)
    n_train = int(n_total * fractions[0])
    n_val = int(n_total * fractions[1])
    splits = {
        "train": samples[:n_train],
        "val": samples[n_train : n_train + n_val],
        "test": samples[n_train + n_val :],
    }
    for name, part in splits.items():
        if not part:
            raise EmptySplit(f"{name} split is empty ({n_total} samples total)")

    # Per-cell normalization scales from epochs visible to training only.
    counts = series.counts()
    start_epoch = series.start_epoch or 0
    train_visible_end = splits["train"][-1].target_epoch - start_epoch + max(cfg.horizons)
    scales = counts[: train_visible_end + 1].max(axis=0).astype(np.float64)
    scales = np.maximum(scales, 1.0)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = series.grid
    manifest: dict = {
        "format_version": FORMAT_VERSION,
        "grid": {"rows": grid.rows, "cols": grid.cols, "cell_size_m": grid.cell_size_m},
        "delta_minutes": cfg.delta_minutes,
        "n": cfg.n,
        "horizons": sorted(cfg.horizons),
        "day_epochs": cfg.day_epochs,
        "week_epochs": cfg.week_epochs,
        "scales": [float(s) for s in scales],
        "scale_epoch_range": [int(start_epoch), int(start_epoch + train_visible_end)],
        "splits": {},
    }
    if source:
        manifest["source"] = source
    for name, part in splits.items():
        file_name = f"{name}.bin"
        sha = _write_split(out / file_name, part, cfg, grid.n_cells)
        manifest["splits"][name] = {
            "file": file_name,
            "samples": len(part),
            "target_epoch_range": [part[0].target_epoch, part[-1].target_epoch],
            "sha256": sha,
        }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest
