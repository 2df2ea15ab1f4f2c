"""TMC-side epoch processing and the decrypted density time series.

collect_epoch assembles, for every cell, exactly one ciphertext per driver:
the report entry when the driver mentioned the cell, otherwise a pooled
encrypted zero. Each cell is then aggregate-decrypted with the all-ones
functional key, yielding the per-cell driver count. All L cells are
processed every epoch, reported or not, for a constant work profile.

This module exposes no single-ciphertext decryption: the only plaintext
producing call is the aggregate over a full driver vector, so the TMC never
observes an individual driver's contribution.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ipfe
from .errors import ConfigError, DuplicateReport, EpochGap, ProtocolError
from .grid import GridSpec, Report, ZeroPool
from .ipfe import FunctionalKey


@dataclass(frozen=True, eq=False)
class EpochAggregate:
    """Decrypted density map for one epoch."""

    epoch: int
    density: np.ndarray  # uint16, one count per cell
    padded_count: int


def collect_epoch(
    reports: list[Report],
    dk: FunctionalKey,
    pool: ZeroPool,
    n_drivers: int,
    n_cells: int,
    epoch: int | None = None,
) -> EpochAggregate:
    """Aggregates one epoch's reports into a per-cell density vector.

    Raises DuplicateReport for a second report from the same driver,
    ProtocolError for reports from outside the key's driver set or for a
    different epoch, and PoolExhausted when padding cannot be served.
    """
    drivers = sorted(dk.y)
    if len(drivers) != n_drivers or any(dk.y[i] != 1 for i in drivers):
        raise ProtocolError("functional key must be all-ones over the driver set")
    if epoch is None:
        epoch = reports[0].epoch if reports else 0

    by_driver: dict[int, Report] = {}
    for report in reports:
        if report.driver_id not in dk.y:
            raise ProtocolError(f"report from unregistered driver {report.driver_id}")
        if report.driver_id in by_driver:
            raise DuplicateReport(f"driver {report.driver_id} reported twice")
        if report.epoch != epoch:
            raise ProtocolError(
                f"report for epoch {report.epoch} rejected while collecting {epoch}"
            )
        by_driver[report.driver_id] = report

    cell_cts: list[list[ipfe.Ciphertext]] = [[] for _ in range(n_cells)]
    padded = 0
    for driver_id in drivers:
        report = by_driver.get(driver_id)
        covered = set()
        if report is not None:
            for cell_id, ct in report.entries:
                if cell_id >= n_cells:
                    raise ProtocolError(f"report names cell {cell_id} outside grid")
                cell_cts[cell_id].append(ct)
                covered.add(cell_id)
        for cell_id in range(n_cells):
            if cell_id not in covered:
                cell_cts[cell_id].append(pool.take(driver_id))
                padded += 1

    density = np.zeros(n_cells, dtype=np.uint16)
    for cell_id in range(n_cells):
        density[cell_id] = ipfe.aggregate_decrypt(dk, cell_cts[cell_id], bound=n_drivers)
    return EpochAggregate(epoch=epoch, density=density, padded_count=padded)


class DensitySeries:
    """Contiguous sequence of epoch aggregates with snapshot appends.

    append returns a new series; earlier snapshots keep their contents.
    Linear append chains share the underlying store.
    """

    def __init__(self, grid: GridSpec, delta_minutes: int):
        if delta_minutes < 1:
            raise ConfigError("delta_minutes must be >= 1")
        self.grid = grid
        self.delta_minutes = delta_minutes
        self._store: list[EpochAggregate] = []
        self._length = 0

    def __len__(self) -> int:
        return self._length

    @property
    def epochs(self) -> tuple[EpochAggregate, ...]:
        return tuple(self._store[: self._length])

    @property
    def start_epoch(self) -> int | None:
        return self._store[0].epoch if self._length else None

    def append(self, agg: EpochAggregate) -> "DensitySeries":
        if len(agg.density) != self.grid.n_cells:
            raise ConfigError("density length does not match grid")
        if self._length and agg.epoch != self._store[self._length - 1].epoch + 1:
            raise EpochGap(
                f"epoch {agg.epoch} after {self._store[self._length - 1].epoch}"
            )
        out = DensitySeries(self.grid, self.delta_minutes)
        if len(self._store) == self._length:
            out._store = self._store  # extend shared store in place
        else:
            out._store = self._store[: self._length]  # diverging snapshot
        out._store.append(agg)
        out._length = self._length + 1
        return out

    def counts(self) -> np.ndarray:
        """Stacked (epochs, cells) uint16 density array."""
        if not self._length:
            return np.zeros((0, self.grid.n_cells), dtype=np.uint16)
        return np.stack([a.density for a in self.epochs])

    def to_csv(self, csv_path: str | Path, sidecar_path: str | Path) -> None:
        """Writes `epoch,cell_0,...` rows plus a JSON sidecar of metadata."""
        csv_path, sidecar_path = Path(csv_path), Path(sidecar_path)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch"] + [f"cell_{j}" for j in range(self.grid.n_cells)])
            for agg in self.epochs:
                writer.writerow([agg.epoch] + agg.density.tolist())
        sidecar = {
            "grid": {
                "rows": self.grid.rows,
                "cols": self.grid.cols,
                "cell_size_m": self.grid.cell_size_m,
            },
            "delta_minutes": self.delta_minutes,
            "start_epoch": self.start_epoch,
            "n_epochs": len(self),
        }
        with open(sidecar_path, "w") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_csv(cls, csv_path: str | Path, sidecar_path: str | Path) -> "DensitySeries":
        with open(sidecar_path) as fh:
            meta = json.load(fh)
        grid = GridSpec(
            rows=meta["grid"]["rows"],
            cols=meta["grid"]["cols"],
            cell_size_m=meta["grid"]["cell_size_m"],
        )
        series = cls(grid, meta["delta_minutes"])
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:1] != ["epoch"] or len(header) != grid.n_cells + 1:
                raise ConfigError("density CSV header does not match grid")
            for row in reader:
                agg = EpochAggregate(
                    epoch=int(row[0]),
                    density=np.array([int(v) for v in row[1:]], dtype=np.uint16),
                    padded_count=0,
                )
                series = series.append(agg)
        return series
