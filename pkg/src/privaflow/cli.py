"""Command-line surface: keygen, simulation, benchmarking, dataset export.

One human-editable key=value config file captures a run; flags override
file values; `PRIVAFLOW_SEED` supplies the seed when neither does. Exit
codes are pinned: 0 success, 2 configuration error, 3 protocol error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import struct
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import grid as gridmod
from . import ipfe, matrices
from .errors import ConfigError, PoolExhausted, PrivaflowError, ProtocolError
from .grid import GridSpec, ZeroPool
from .group import SeededRng, group_gen
from .ipfe import DriverKey, FunctionalKey
from .mobility import (
    FleetConfig,
    count_mismatches,
    ground_truth_series,
    init_protocol,
    run_pipeline,
)

ENV_SEED = "PRIVAFLOW_SEED"

# Sizes claimed in the protocol design's own accounting. A 3-element
# ciphertext of 32-byte elements cannot occupy 64 bytes, nor the 4-part
# key 66; the size table prints measured values beside these and flags
# the disagreement rather than hiding it.
CLAIMED_CIPHERTEXT_BYTES = 64
CLAIMED_DRIVER_KEY_BYTES = 66


@dataclass
class RunConfig:
    drivers: int = 200
    rows: int = 8
    cols: int = 10
    cell_size_m: float = 1000.0
    cells: int | None = None  # overrides rows x cols via factorization
    k_anon: int = 5
    delta_minutes: int = 5
    epochs: int = 100
    seed: int | None = None
    report_prob: float = 1.0
    speed_min_mps: float = 5.0
    speed_max_mps: float = 20.0
    downtown_frac: float = 0.3
    attraction_base: float = 0.5
    attraction_amp: float = 0.4
    window_n: int = 15
    horizons: tuple[int, ...] = (1, 3, 6, 12)
    train_frac: float = 0.7
    val_frac: float = 0.15
    runs: int = 1
    threads: int = 1
    security_level: int = 128
    pool_size: int | None = None  # zeros per driver at keygen; default 2L
    bench_cells: tuple[int, ...] = (10, 20, 40, 80)
    bench_drivers: tuple[int, ...] = (10, 20, 40, 80)
    bench_fixed_cells: int = 10
    bench_reps: int = 5
    out: str = "out"


_FLOAT_FIELDS = {
    "cell_size_m", "report_prob", "speed_min_mps", "speed_max_mps",
    "downtown_frac", "attraction_base", "attraction_amp", "train_frac", "val_frac",
}
_TUPLE_FIELDS = {"horizons", "bench_cells", "bench_drivers"}
_STR_FIELDS = {"out"}
_OPTIONAL_INT_FIELDS = {"seed", "cells", "pool_size"}


def _convert(name: str, raw: str):
    raw = raw.strip()
    try:
        if name in _STR_FIELDS:
            return raw
        if name in _FLOAT_FIELDS:
            return float(raw)
        if name in _TUPLE_FIELDS:
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if name in _OPTIONAL_INT_FIELDS and raw.lower() in ("", "none"):
            return None
        return int(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_file(path: str | Path) -> dict:
    """Parses `key = value` lines; # comments and blanks ignored."""
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return values


def _factor_grid(cells: int) -> tuple[int, int]:
    # Largest divisor <= sqrt gives the most nearly square grid.
    if cells < 1:
        raise ConfigError("cells must be >= 1")
    rows = next(d for d in range(math.isqrt(cells), 0, -1) if cells % d == 0)
    return rows, cells // rows


def build_run_config(file_values: dict, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    for source in (file_values, overrides):
        for key, value in source.items():
            if value is not None:
                cfg = replace(cfg, **{key: value})
    if cfg.cells is not None:
        rows, cols = _factor_grid(cfg.cells)
        cfg = replace(cfg, rows=rows, cols=cols, cells=None)
    if cfg.seed is None:
        env = os.environ.get(ENV_SEED)
        try:
            cfg = replace(cfg, seed=int(env) if env else 0)
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from None
    group_gen(cfg.security_level)
    if cfg.runs < 1 or cfg.threads < 1 or cfg.bench_reps < 1:
        raise ConfigError("runs, threads, and bench_reps must be >= 1")
    if cfg.train_frac <= 0 or cfg.val_frac <= 0:
        raise ConfigError("split fractions must be positive")
    if cfg.train_frac + cfg.val_frac >= 1:
        raise ConfigError("train_frac + val_frac must leave room for a test split")
    if not cfg.bench_cells or not cfg.bench_drivers:
        raise ConfigError("bench sweeps must be non-empty")
    fleet_config(cfg)  # validates the grid/fleet parameter interplay
    return cfg


def grid_spec(cfg: RunConfig) -> GridSpec:
    return GridSpec(rows=cfg.rows, cols=cfg.cols, cell_size_m=cfg.cell_size_m)


def fleet_config(cfg: RunConfig, seed: int | None = None) -> FleetConfig:
    return FleetConfig(
        n_drivers=cfg.drivers,
        grid=grid_spec(cfg),
        k_anon=cfg.k_anon,
        delta_minutes=cfg.delta_minutes,
        n_epochs=cfg.epochs,
        seed=cfg.seed if seed is None else seed,
        speed_mps_range=(cfg.speed_min_mps, cfg.speed_max_mps),
        report_probability=cfg.report_prob,
        downtown_frac=cfg.downtown_frac,
        attraction_base=cfg.attraction_base,
        attraction_amp=cfg.attraction_amp,
    )


def serialized_sizes(k_anon: int) -> list[dict]:
    """Measured wire sizes beside the design-claimed figures."""
    rows = [
        {"quantity": "group element", "measured": 32, "claimed": None},
        {"quantity": "ciphertext payload (3 elements)", "measured": ipfe.CT_ELEMENTS_LEN,
         "claimed": CLAIMED_CIPHERTEXT_BYTES},
        {"quantity": "cell record (header + payload)", "measured": gridmod.CELL_RECORD_LEN,
         "claimed": None},
        {"quantity": "driver key material", "measured": ipfe.KEY_MATERIAL_LEN,
         "claimed": CLAIMED_DRIVER_KEY_BYTES},
        {"quantity": "driver key record", "measured": ipfe.KEY_RECORD_LEN, "claimed": None},
        {"quantity": f"report payload (K={k_anon} records)",
         "measured": k_anon * gridmod.CELL_RECORD_LEN,
         "claimed": k_anon * CLAIMED_CIPHERTEXT_BYTES},
    ]
    for row in rows:
        row["flag"] = (
            "ok" if row["claimed"] in (None, row["measured"]) else "MISMATCH vs claim"
        )
    return rows


def _print_sizes(k_anon: int) -> None:
    print(f"{'quantity':<36} {'measured':>9} {'claimed':>8}  note")
    for row in serialized_sizes(k_anon):
        claimed = "-" if row["claimed"] is None else str(row["claimed"])
        print(f"{row['quantity']:<36} {row['measured']:>9} {claimed:>8}  {row['flag']}")


def _keygen_rng(cfg: RunConfig) -> SeededRng:
    return SeededRng(f"keygen:{cfg.seed}")


def _keys_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out) / "keys"


POOL_MAGIC = b"PFZP"


def _write_pool_file(path: Path, driver_id: int, entries) -> None:
    with open(path, "wb") as fh:
        fh.write(POOL_MAGIC + struct.pack("<BII", 1, driver_id, len(entries)))
        for ct in entries:
            fh.write(ipfe.encode_ciphertext_elements(ct))


def _read_pool_file(path: Path):
    data = path.read_bytes()
    if data[:4] != POOL_MAGIC:
        raise ConfigError(f"{path} is not a pool file")
    _, driver_id, count = struct.unpack_from("<BII", data, 4)
    off = 13
    entries = []
    for _ in range(count):
        entries.append(ipfe.decode_ciphertext_elements(driver_id, data[off : off + 96]))
        off += 96
    return entries


def cmd_keygen(cfg: RunConfig) -> int:
    grid = grid_spec(cfg)
    rng = _keygen_rng(cfg)
    keys, dk, _ = init_protocol(fleet_config(cfg), rng)
    keys_dir = _keys_dir(cfg)
    keys_dir.mkdir(parents=True, exist_ok=True)
    mpk = {
        "group_id": group_gen(cfg.security_level).group_id,
        "drivers": {
            str(i): {
                "avec": [key.e_avec[0].to_bytes(32, "little").hex(),
                         key.e_avec[1].to_bytes(32, "little").hex()],
                "w_avec": key.e_w_avec.to_bytes(32, "little").hex(),
            }
            for i, key in keys.items()
        },
    }
    (keys_dir / "mpk.json").write_text(json.dumps(mpk, indent=2) + "\n")
    for i, key in keys.items():
        (keys_dir / f"driver_{i:05d}.key").write_bytes(ipfe.encode_driver_key(key))
    (keys_dir / "functional.key").write_bytes(ipfe.encode_functional_key(dk))
    pool_size = cfg.pool_size if cfg.pool_size is not None else 2 * grid.n_cells
    for i, key in keys.items():
        entries = gridmod.provision_zero_pool(key, pool_size, rng)
        _write_pool_file(keys_dir / f"pool_{i:05d}.bin", i, entries)
    print(f"wrote {len(keys)} driver keys, functional key, and pools to {keys_dir}")
    _print_sizes(cfg.k_anon)
    return 0


def _load_keys(cfg: RunConfig) -> tuple[dict[int, DriverKey], FunctionalKey, ZeroPool] | None:
    keys_dir = _keys_dir(cfg)
    key_files = sorted(keys_dir.glob("driver_*.key")) if keys_dir.is_dir() else []
    if len(key_files) != cfg.drivers or not (keys_dir / "functional.key").is_file():
        return None
    keys = {}
    for path in key_files:
        key = ipfe.decode_driver_key(path.read_bytes())
        keys[key.driver_id] = key
    dk = ipfe.decode_functional_key((keys_dir / "functional.key").read_bytes())
    pool = ZeroPool()
    for path in sorted(keys_dir.glob("pool_*.bin")):
        pool.deposit(_read_pool_file(path))
    return keys, dk, pool


def _simulate_one(cfg: RunConfig, seed: int) -> dict:
    fleet = fleet_config(cfg, seed=seed)
    loaded = None if cfg.runs > 1 else _load_keys(cfg)
    if loaded is None:
        keys, dk, pool = init_protocol(fleet, SeededRng(f"keygen:{seed}"))
    else:
        keys, dk, pool = loaded
    started = time.perf_counter()
    try:
        series, truth = run_pipeline(fleet, keys, dk, pool)
    except PoolExhausted as exc:
        per_driver = fleet.n_epochs * fleet.grid.n_cells
        raise PoolExhausted(
            f"{exc}; provision at least {per_driver} zeros per driver "
            f"(epochs x cells) or keep lazy replenishment enabled"
        ) from exc
    elapsed = time.perf_counter() - started
    mismatches = count_mismatches(series, truth)
    run_dir = Path(cfg.out) / f"run_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    series.to_csv(run_dir / "density.csv", run_dir / "density.json")
    padded = sum(agg.padded_count for agg in series.epochs)
    return {
        "seed": seed,
        "mismatches": mismatches,
        "padded": padded,
        "seconds": elapsed,
        "undercount_only": bool((series.counts() <= truth.density).all()),
    }


def _simulate_one_packed(args) -> dict:
    cfg_values, seed = args
    return _simulate_one(RunConfig(**cfg_values), seed)


def cmd_simulate(cfg: RunConfig, inline_keygen: bool = False) -> int:
    if inline_keygen or (_load_keys(cfg) is None and cfg.runs == 1):
        print("generating keys inline")
    seeds = [cfg.seed + r for r in range(cfg.runs)]
    if cfg.threads > 1 and cfg.runs > 1:
        cfg_values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_simulate_one_packed, [(cfg_values, s) for s in seeds]))
    else:
        results = [_simulate_one(cfg, s) for s in seeds]
    total_mismatch = 0
    for res in results:
        total_mismatch += res["mismatches"]
        print(
            f"run seed={res['seed']}: mismatches={res['mismatches']} "
            f"padded={res['padded']} time={res['seconds']:.1f}s"
        )
        if cfg.report_prob < 1 and not res["undercount_only"]:
            raise ProtocolError("partial reporting produced an overcount")
    summary = {
        "runs": cfg.runs,
        "total_mismatches": total_mismatch,
        "mean_seconds": statistics.mean(r["seconds"] for r in results),
    }
    with open(Path(cfg.out) / "simulate_summary.json", "w") as fh:
        json.dump({"config_seed": cfg.seed, "results": results, "summary": summary}, fh, indent=2)
    print(f"{cfg.runs} run(s), total mismatches {total_mismatch}")
    if cfg.report_prob == 1.0 and total_mismatch:
        raise ProtocolError(
            f"exactness violated: {total_mismatch} mismatching cells at full reporting"
        )
    return 0


def bench_encrypt(cfg: RunConfig) -> dict:
    """Median seconds to build one K=k report, per cell count k."""
    rng = SeededRng(f"bench:{cfg.seed}")
    msk = ipfe.setup([0], rng)
    key = ipfe.derive_driver_key(msk, 0)
    rows = []
    for k in cfg.bench_cells:
        grid = GridSpec(rows=1, cols=k, cell_size_m=100.0)
        times = []
        for rep in range(cfg.bench_reps + 1):
            t0 = time.perf_counter()
            gridmod.build_report(key, 0, k, grid, epoch=0, rng=rng)
            if rep:  # first rep is warm-up
                times.append(time.perf_counter() - t0)
        rows.append({"cells": k, "median_s": statistics.median(times), "reps": cfg.bench_reps})
    xs = [row["cells"] for row in rows]
    ys = [row["median_s"] for row in rows]
    slope, intercept = np.polyfit(xs, ys, 1)
    predicted = np.polyval([slope, intercept], xs)
    ss_res = float(np.sum((np.array(ys) - predicted) ** 2))
    ss_tot = float(np.sum((np.array(ys) - np.mean(ys)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot else 1.0
    return {"rows": rows, "slope_s_per_cell": float(slope), "intercept_s": float(intercept), "r2": float(r2)}


def bench_decrypt(cfg: RunConfig) -> dict:
    """Median seconds to aggregate-decrypt all cells, per driver count."""
    from .aggregator import collect_epoch

    rng = SeededRng(f"bench-dec:{cfg.seed}")
    n_cells = cfg.bench_fixed_cells
    grid = GridSpec(rows=1, cols=n_cells, cell_size_m=100.0)
    rows = []
    for n in cfg.bench_drivers:
        ids = list(range(n))
        msk = ipfe.setup(ids, rng)
        keys = {i: ipfe.derive_driver_key(msk, i) for i in ids}
        dk = ipfe.derive_functional_key(msk, {i: 1 for i in ids})
        reports = [
            gridmod.build_report(keys[i], i % n_cells, 1, grid, 0, rng) for i in ids
        ]
        times = []
        for rep in range(cfg.bench_reps + 1):
            pool = ZeroPool()
            for i in ids:
                pool.provision(keys[i], n_cells - 1, rng)
            t0 = time.perf_counter()
            collect_epoch(reports, dk, pool, n, n_cells, epoch=0)
            if rep:
                times.append(time.perf_counter() - t0)
        rows.append({"drivers": n, "median_s": statistics.median(times), "cells": n_cells})
    return {"rows": rows, "fixed_cells": n_cells}


def cmd_bench(cfg: RunConfig, mode: str = "all") -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    if mode in ("encrypt", "all"):
        enc = bench_encrypt(cfg)
        results["encrypt"] = enc
        with open(out / "bench_encrypt.csv", "w") as fh:
            fh.write("cells,median_s\n")
            for row in enc["rows"]:
                fh.write(f"{row['cells']},{row['median_s']:.6f}\n")
        print("encryption time vs cells (median of reps):")
        for row in enc["rows"]:
            print(f"  k={row['cells']:>3}  {row['median_s'] * 1e3:8.2f} ms")
        print(
            f"  linear fit: {enc['slope_s_per_cell'] * 1e3:.3f} ms/cell, "
            f"R^2 = {enc['r2']:.4f}"
        )
        at80 = next((r for r in enc["rows"] if r["cells"] == 80), None)
        if at80:
            print(
                f"  note: design-claimed ~50 ms at 80 cells; measured "
                f"{at80['median_s'] * 1e3:.1f} ms (hardware-relative, not asserted)"
            )
    if mode in ("decrypt", "all"):
        dec = bench_decrypt(cfg)
        results["decrypt"] = dec
        with open(out / "bench_decrypt.csv", "w") as fh:
            fh.write("drivers,cells,median_s\n")
            for row in dec["rows"]:
                fh.write(f"{row['drivers']},{row['cells']},{row['median_s']:.6f}\n")
        print(f"decryption time vs drivers (all {dec['fixed_cells']} cells):")
        for row in dec["rows"]:
            print(f"  drivers={row['drivers']:>4}  {row['median_s'] * 1e3:8.2f} ms")
        print("  note: design-claimed < 600 ms at 200 drivers x 80 cells (hardware-relative)")
    with open(out / "bench.json", "w") as fh:
        json.dump(results, fh, indent=2)
    return 0


def cmd_export(cfg: RunConfig, encrypted: bool = False) -> int:
    window = matrices.WindowConfig(
        n=cfg.window_n, delta_minutes=cfg.delta_minutes, horizons=tuple(cfg.horizons)
    )
    needed = window.week_epochs + window.n + max(window.horizons) + 2
    if cfg.epochs < needed:
        raise ConfigError(
            f"epochs={cfg.epochs} cannot reach back one week; need >= {needed} "
            f"(three weeks, epochs={3 * window.week_epochs + window.n + 20}, is typical)"
        )
    fleet = fleet_config(cfg)
    if encrypted:
        keys, dk, pool = init_protocol(fleet, SeededRng(f"keygen:{cfg.seed}"))
        series, _ = run_pipeline(fleet, keys, dk, pool)
        source_mode = "encrypted-pipeline"
    else:
        series = ground_truth_series(fleet)
        source_mode = "ground-truth"
    out_dir = Path(cfg.out) / "dataset"
    manifest = matrices.export_dataset(
        series,
        window,
        (cfg.train_frac, cfg.val_frac, 1.0 - cfg.train_frac - cfg.val_frac),
        out_dir,
        source={
            "mode": source_mode,
            "seed": cfg.seed,
            "drivers": cfg.drivers,
            "epochs": cfg.epochs,
            "report_prob": cfg.report_prob,
        },
    )
    print(f"dataset written to {out_dir}")
    print(f"  horizons: {manifest['horizons']}")
    for name, info in manifest["splits"].items():
        print(f"  {name}: {info['samples']} samples, sha256 {info['sha256'][:12]}...")
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--drivers", type=int)
    parser.add_argument("--cells", type=int, help="total cells (factored to a grid)")
    parser.add_argument("--k-anon", dest="k_anon", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--report-prob", dest="report_prob", type=float)
    parser.add_argument("--runs", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privaflow",
        description="Privacy-preserving traffic density aggregation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("keygen", "generate driver keys, functional key, and zero pools"),
        ("simulate", "run the encrypted reporting pipeline"),
        ("bench", "time encryption/decryption scaling"),
        ("export", "export the forecaster training dataset"),
    ):
        p = sub.add_parser(name, help=descr)
        _add_common_flags(p)
        if name == "simulate":
            p.add_argument("--keygen", action="store_true", help="regenerate keys inline")
        if name == "bench":
            p.add_argument("--mode", choices=("encrypt", "decrypt", "all"), default="all")
        if name == "export":
            p.add_argument("--encrypted", action="store_true",
                           help="run the full protocol instead of ground truth")
    return parser


_OVERRIDE_KEYS = (
    "seed", "drivers", "cells", "k_anon", "epochs", "report_prob", "runs", "threads", "out",
)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
        cfg = build_run_config(file_values, overrides)
        if args.command == "keygen":
            return cmd_keygen(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, inline_keygen=args.keygen)
        if args.command == "bench":
            return cmd_bench(cfg, mode=args.mode)
        if args.command == "export":
            return cmd_export(cfg, encrypted=args.encrypted)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except PrivaflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
