"""Grid geometry, k-anonymous cell reports, and the encrypted-zero pool.

A coverage area is cut into rows x cols square cells indexed row-major.
Each reporting period a driver encrypts 1 for its true cell and 0 for K-1
dummy cells drawn uniformly without replacement from the remaining cells,
so the true location hides inside an anonymity set of size K. Entries are
sorted by cell id: nothing about a report's structure depends on which
member is real.

The zero pool holds driver-pre-provisioned encryptions of 0 that the
aggregator consumes to pad (driver, cell) pairs absent from reports. The
aggregator cannot mint these itself: encryption needs the driver's pad u_i.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

from . import ipfe
from .errors import ConfigError, DecodeError, OutOfBounds, PoolExhausted
from .ipfe import Ciphertext, DriverKey

# Cell ciphertext record (103 bytes, little-endian):
#   [u8 version][u32 driver_id][u16 cell_id][96B t0|t1|c]
CELL_RECORD_LEN = 1 + 4 + 2 + ipfe.CT_ELEMENTS_LEN
# Report (10 + K * 103 bytes): [u32 driver_id][u32 epoch][u16 K] + K records,
# sorted ascending by cell_id.
REPORT_HEADER_LEN = 10

MAX_CELLS = 65535  # cell ids travel as u16


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid of square cells; row-major cell ids."""

    rows: int
    cols: int
    cell_size_m: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid must have at least one row and column")
        if self.cell_size_m <= 0:
            raise ConfigError("cell size must be positive")
        if self.rows * self.cols > MAX_CELLS:
            raise ConfigError(f"grid exceeds {MAX_CELLS} cells")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def width_m(self) -> float:
        return self.cols * self.cell_size_m

    @property
    def height_m(self) -> float:
        return self.rows * self.cell_size_m


def locate(grid: GridSpec, position: tuple[float, float]) -> int:
    """Maps a position in meters to its cell id.

    The grid box is closed-open: 0 <= x < width, 0 <= y < height. Boundary
    points between cells fall to the lower-index cell (floor semantics).
    """
    x, y = position
    if not (0 <= x < grid.width_m and 0 <= y < grid.height_m):
        raise OutOfBounds(f"position ({x}, {y}) outside grid")
    return int(y // grid.cell_size_m) * grid.cols + int(x // grid.cell_size_m)


@dataclass(frozen=True)
class Report:
    """One driver's k-anonymous submission for one epoch."""

    driver_id: int
    epoch: int
    entries: tuple[tuple[int, Ciphertext], ...]  # (cell_id, ct), sorted

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def cell_ids(self) -> tuple[int, ...]:
        return tuple(cell for cell, _ in self.entries)


def _sample_dummies(true_cell: int, k: int, n_cells: int, rng) -> list[int]:
    # Uniform without replacement from the n_cells - 1 cells != true_cell,
    # via partial Fisher-Yates so k close to n_cells stays uniform and O(L).
    others = [c for c in range(n_cells) if c != true_cell]
    m = len(others)
    for i in range(k - 1):
        j = rng.randrange(i, m)
        others[i], others[j] = others[j], others[i]
    return others[: k - 1]


def build_report(
    key: DriverKey, true_cell: int, k: int, grid: GridSpec, epoch: int, rng
) -> Report:
    """Builds a k-anonymous report: 1 at the true cell, 0 at k-1 dummies."""
    n = grid.n_cells
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if not 0 <= true_cell < n:
        raise ConfigError(f"cell id {true_cell} outside grid of {n} cells")
    cells = [(true_cell, 1)] + [(c, 0) for c in _sample_dummies(true_cell, k, n, rng)]
    cells.sort()
    entries = tuple((cell, ipfe.encrypt(key, pt, rng)) for cell, pt in cells)
    return Report(driver_id=key.driver_id, epoch=epoch, entries=entries)


def provision_zero_pool(key: DriverKey, count: int, rng) -> list[Ciphertext]:
    """Produces ``count`` fresh encryptions of 0 under the driver's key."""
    if count < 1:
        raise ConfigError("pool provisioning count must be >= 1")
    return [ipfe.encrypt(key, 0, rng) for _ in range(count)]


@dataclass
class ZeroPool:
    """Per-driver queues of encrypted zeros, each consumed at most once.

    A pooled ciphertext carries no cell binding; the aggregator assigns it
    to whatever (driver, cell) pair needs padding when it is taken.
    """

    _queues: dict[int, deque[Ciphertext]] = field(default_factory=dict)

    def deposit(self, entries: list[Ciphertext]) -> None:
        for ct in entries:
            self._queues.setdefault(ct.driver_id, deque()).append(ct)

    def provision(self, key: DriverKey, count: int, rng) -> None:
        self.deposit(provision_zero_pool(key, count, rng))

    def take(self, driver_id: int) -> Ciphertext:
        queue = self._queues.get(driver_id)
        if not queue:
            raise PoolExhausted(f"no pooled zeros left for driver {driver_id}")
        return queue.popleft()

    def remaining(self, driver_id: int) -> int:
        queue = self._queues.get(driver_id)
        return len(queue) if queue else 0


def encode_cell_record(cell_id: int, ct: Ciphertext) -> bytes:
    return (
        struct.pack("<BIH", ipfe.WIRE_VERSION, ct.driver_id, cell_id)
        + ipfe.encode_ciphertext_elements(ct)
    )


def decode_cell_record(data: bytes) -> tuple[int, Ciphertext]:
    if len(data) != CELL_RECORD_LEN:
        raise DecodeError(f"cell record must be {CELL_RECORD_LEN} bytes")
    version, driver_id, cell_id = struct.unpack_from("<BIH", data)
    if version != ipfe.WIRE_VERSION:
        raise DecodeError(f"unsupported record version {version}")
    return cell_id, ipfe.decode_ciphertext_elements(driver_id, data[7:])


def encode_report(report: Report) -> bytes:
    out = [struct.pack("<IIH", report.driver_id, report.epoch, report.k)]
    out.extend(encode_cell_record(cell, ct) for cell, ct in report.entries)
    return b"".join(out)


def decode_report(data: bytes) -> Report:
    if len(data) < REPORT_HEADER_LEN:
        raise DecodeError("report truncated")
    driver_id, epoch, k = struct.unpack_from("<IIH", data)
    if len(data) != REPORT_HEADER_LEN + k * CELL_RECORD_LEN:
        raise DecodeError("report length does not match entry count")
    entries = []
    prev_cell = -1
    for i in range(k):
        off = REPORT_HEADER_LEN + i * CELL_RECORD_LEN
        cell_id, ct = decode_cell_record(data[off : off + CELL_RECORD_LEN])
        if ct.driver_id != driver_id:
            raise DecodeError("record driver id differs from report header")
        if cell_id <= prev_cell:
            raise DecodeError("report entries must be sorted by distinct cell id")
        prev_cell = cell_id
        entries.append((cell_id, ct))
    return Report(driver_id=driver_id, epoch=epoch, entries=tuple(entries))
