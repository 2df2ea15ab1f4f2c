"""Seeded fleet simulator and the end-to-end encrypted reporting pipeline.

Drivers follow random-waypoint motion: pick a uniform waypoint, move toward
it at a per-tick uniform speed, pick a new one on arrival. Waypoint choice
is biased toward a central downtown block with a sinusoidal daily weight
(minimum at midnight, peak at midday), which gives the density series the
daily and weekly structure the forecasting matrices presuppose.

Everything is driven by the config seed: the simulated ground truth, the
reporting decisions, and (by default) the protocol randomness, so a config
maps to byte-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ipfe
from .aggregator import DensitySeries, EpochAggregate, collect_epoch
from .errors import ConfigError, MissingDriver
from .grid import GridSpec, ZeroPool, build_report
from .group import SeededRng
from .ipfe import DriverKey, FunctionalKey


@dataclass(frozen=True)
class FleetConfig:
    n_drivers: int
    grid: GridSpec
    k_anon: int = 5
    delta_minutes: int = 5
    n_epochs: int = 100
    seed: int = 0
    speed_mps_range: tuple[float, float] = (5.0, 20.0)
    report_probability: float = 1.0
    downtown_frac: float = 0.3
    attraction_base: float = 0.5
    attraction_amp: float = 0.4

    def __post_init__(self):
        if self.n_drivers < 0:
            raise ConfigError("n_drivers must be >= 0")
        if not 1 <= self.k_anon <= self.grid.n_cells:
            raise ConfigError(f"k_anon must be in [1, {self.grid.n_cells}]")
        if self.delta_minutes < 1 or self.n_epochs < 0:
            raise ConfigError("delta_minutes must be >= 1 and n_epochs >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not 0 <= self.report_probability <= 1:
            raise ConfigError("report_probability must be in [0, 1]")
        lo, hi = self.speed_mps_range
        if not 0 < lo <= hi:
            raise ConfigError("speed range must satisfy 0 < min <= max")
        if not 0 < self.downtown_frac <= 1:
            raise ConfigError("downtown_frac must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    positions: np.ndarray  # (epochs, drivers, 2) float32, meters
    cells: np.ndarray  # (epochs, drivers) int32
    density: np.ndarray  # (epochs, cells) uint16


def _downtown_weight(cfg: FleetConfig, epoch: int) -> float:
    day = 1440.0 / cfg.delta_minutes  # epochs per day
    phase = 2 * math.pi * ((epoch % day) / day)
    return min(1.0, max(0.0, cfg.attraction_base - cfg.attraction_amp * math.cos(phase)))


def _draw_waypoints(cfg: FleetConfig, rng: np.random.Generator, count: int, epoch: int) -> np.ndarray:
    w, h = cfg.grid.width_m, cfg.grid.height_m
    out = rng.uniform((0.0, 0.0), (w, h), size=(count, 2))
    downtown = rng.random(count) < _downtown_weight(cfg, epoch)
    k = int(downtown.sum())
    if k:
        dw, dh = w * cfg.downtown_frac, h * cfg.downtown_frac
        x0, y0 = (w - dw) / 2, (h - dh) / 2
        out[downtown] = rng.uniform((x0, y0), (x0 + dw, y0 + dh), size=(k, 2))
    return out


def simulate(cfg: FleetConfig) -> GroundTruth:
    """Runs the mobility model; fully determined by cfg (including seed)."""
    t_epochs, n = cfg.n_epochs, cfg.n_drivers
    grid = cfg.grid
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0))))
    pos = rng.uniform((0.0, 0.0), (grid.width_m, grid.height_m), size=(n, 2))
    waypoints = _draw_waypoints(cfg, rng, n, 0)
    tick_s = cfg.delta_minutes * 60.0

    positions = np.empty((t_epochs, n, 2), dtype=np.float32)
    cells = np.empty((t_epochs, n), dtype=np.int32)
    density = np.zeros((t_epochs, grid.n_cells), dtype=np.uint16)
    # Keep float32-rounded positions strictly inside the closed-open box.
    limit = np.nextafter(
        np.array([grid.width_m, grid.height_m], dtype=np.float32), np.float32(0)
    )
    for t in range(t_epochs):
        snap = np.minimum(pos.astype(np.float32), limit)
        positions[t] = snap
        col = (snap[:, 0] // grid.cell_size_m).astype(np.int64)
        row = (snap[:, 1] // grid.cell_size_m).astype(np.int64)
        cell = row * grid.cols + col
        cells[t] = cell
        if n:
            density[t] = np.bincount(cell, minlength=grid.n_cells)
        # Integrate one tick toward the waypoint; re-draw on arrival.
        speed = rng.uniform(cfg.speed_mps_range[0], cfg.speed_mps_range[1], size=n)
        step = speed * tick_s
        vec = waypoints - pos
        dist = np.hypot(vec[:, 0], vec[:, 1])
        arrived = step >= dist
        moving = ~arrived
        if moving.any():
            pos[moving] += vec[moving] / dist[moving, None] * step[moving, None]
        if arrived.any():
            pos[arrived] = waypoints[arrived]
            waypoints[arrived] = _draw_waypoints(cfg, rng, int(arrived.sum()), t + 1)
    return GroundTruth(positions=positions, cells=cells, density=density)


def init_protocol(cfg: FleetConfig, rng) -> tuple[dict[int, DriverKey], FunctionalKey, ZeroPool]:
    """Key ceremony for a fleet: per-driver keys, all-ones key, empty pool."""
    ids = list(range(cfg.n_drivers))
    msk = ipfe.setup(ids, rng)
    keys = {i: ipfe.derive_driver_key(msk, i) for i in ids}
    dk = ipfe.derive_functional_key(msk, {i: 1 for i in ids})
    return keys, dk, ZeroPool()


def run_pipeline(
    cfg: FleetConfig,
    keys: dict[int, DriverKey],
    dk: FunctionalKey,
    pool: ZeroPool,
    *,
    crypto_rng=None,
    replenish: bool = True,
) -> tuple[DensitySeries, GroundTruth]:
    """Simulates the fleet and runs the full encrypted reporting loop.

    Per epoch: drivers report with the configured probability, the pool is
    lazily topped up to one worst-case epoch per driver (when replenish is
    set; otherwise the pre-provisioned pool must cover the demand), and the
    aggregator decrypts all cells. Returns the decrypted series and the
    ground truth for comparison.
    """
    n, grid = cfg.n_drivers, cfg.grid
    missing = [i for i in range(n) if i not in keys]
    if missing:
        raise MissingDriver(f"no key for drivers {missing[:5]}")
    if crypto_rng is None:
        crypto_rng = SeededRng(f"pipeline:{cfg.seed}")
    report_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 1))))

    truth = simulate(cfg)
    series = DensitySeries(grid, cfg.delta_minutes)
    n_cells = grid.n_cells
    for t in range(cfg.n_epochs):
        reporting = report_rng.random(n) < cfg.report_probability
        if replenish:
            for i in range(n):
                deficit = n_cells - pool.remaining(i)
                if deficit > 0:
                    pool.provision(keys[i], deficit, crypto_rng)
        reports = [
            build_report(keys[i], int(truth.cells[t, i]), cfg.k_anon, grid, t, crypto_rng)
            for i in range(n)
            if reporting[i]
        ]
        agg = collect_epoch(reports, dk, pool, n, n_cells, epoch=t)
        series = series.append(agg)
    return series, truth


def count_mismatches(series: DensitySeries, truth: GroundTruth) -> int:
    """Number of (epoch, cell) pairs where decrypted and true density differ."""
    decrypted = series.counts()
    if decrypted.shape != truth.density.shape:
        raise ConfigError("series and ground truth cover different shapes")
    return int((decrypted != truth.density).sum())


def ground_truth_series(cfg: FleetConfig, truth: GroundTruth | None = None) -> DensitySeries:
    """Wraps simulated ground-truth densities in a DensitySeries.

    With full reporting the decrypted series equals this exactly (the
    pipeline tests prove it), so dataset exports can skip the protocol.
    """
    if truth is None:
        truth = simulate(cfg)
    series = DensitySeries(cfg.grid, cfg.delta_minutes)
    for t in range(truth.density.shape[0]):
        series = series.append(
            EpochAggregate(epoch=t, density=truth.density[t], padded_count=0)
        )
    return series
