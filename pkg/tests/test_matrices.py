"""Window construction identities, chronological splits, binary export.

Oracle: direct indexing into the raw counts array, independent of the
window-slicing code.
"""

import json

import numpy as np
import pytest

from privaflow import matrices as mx
from privaflow.aggregator import DensitySeries, EpochAggregate
from privaflow.errors import ConfigError, DecodeError, EmptySplit, SeriesTooShort
from privaflow.grid import GridSpec


def series_from_counts(counts: np.ndarray, delta=5) -> DensitySeries:
    grid = GridSpec(rows=1, cols=counts.shape[1], cell_size_m=100.0)
    series = DensitySeries(grid, delta)
    for t in range(counts.shape[0]):
        series = series.append(
            EpochAggregate(epoch=t, density=counts[t].astype(np.uint16), padded_count=0)
        )
    return series


def random_counts(t_epochs, n_cells, seed=0, high=50):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.integers(0, high, size=(t_epochs, n_cells), dtype=np.uint16)


CFG = mx.WindowConfig(n=15, delta_minutes=5, horizons=(1, 3, 6, 12))


def test_window_config_validation():
    assert CFG.day_epochs == 288
    assert CFG.week_epochs == 2016
    with pytest.raises(ConfigError):
        mx.WindowConfig(n=0)
    with pytest.raises(ConfigError):
        mx.WindowConfig(horizons=(0, 1))
    with pytest.raises(ConfigError):
        mx.WindowConfig(horizons=(1, 1))
    with pytest.raises(ConfigError):
        mx.WindowConfig(delta_minutes=7)  # does not divide a day evenly
    assert mx.WindowConfig(delta_minutes=10).day_epochs == 144


def test_column_index_identities():
    counts = random_counts(2300, 6, seed=1)
    series = series_from_counts(counts)
    samples = {s.target_epoch: s for s in mx.build_windows(series, CFG)}
    rng = np.random.Generator(np.random.PCG64(2))
    weekly_ts = [ts for ts, s in samples.items() if s.weekly is not None]
    assert weekly_ts  # 2300 epochs reach back one week
    for ts in rng.choice(weekly_ts, size=20, replace=False):
        s = samples[int(ts)]
        assert s.current.shape == (6, 16)
        assert s.daily.shape == (6, 31)
        assert s.weekly.shape == (6, 31)
        for k in (0, 7, 15):
            assert np.array_equal(s.current[:, k], counts[ts - 15 + k])
        for k in (0, 15, 30):
            assert np.array_equal(s.daily[:, k], counts[ts - 288 - 15 + k])
            assert np.array_equal(s.weekly[:, k], counts[ts - 2016 - 15 + k])
        # Daily center column is exactly the same moment one day back.
        assert np.array_equal(s.daily[:, 15], counts[ts - 288])
        for h in (1, 3, 6, 12):
            assert np.array_equal(s.labels[h], counts[ts + h])


def test_constant_series_constant_windows():
    counts = np.full((2100, 4), 9, dtype=np.uint16)
    series = series_from_counts(counts)
    sample = next(s for s in mx.build_windows(series, CFG) if s.complete)
    assert (sample.current == 9).all()
    assert (sample.daily == 9).all()
    assert (sample.weekly == 9).all()
    assert all((lab == 9).all() for lab in sample.labels.values())


def test_no_leakage_and_ordering():
    counts = random_counts(2200, 3, seed=3)
    series = series_from_counts(counts)
    previous_ts = -1
    for s in mx.build_windows(series, CFG):
        assert s.target_epoch > previous_ts  # emitted oldest first
        previous_ts = s.target_epoch
        max_input_epoch = s.target_epoch  # newest current column
        if s.daily is not None:
            max_input_epoch = max(max_input_epoch, s.target_epoch - 288 + 15)
        min_label_epoch = s.target_epoch + 1
        assert max_input_epoch < min_label_epoch


def test_partial_windows_flagged():
    counts = random_counts(400, 3, seed=4)
    series = series_from_counts(counts)
    samples = list(mx.build_windows(series, CFG))
    assert samples  # current-only targets exist
    assert all(s.weekly is None for s in samples)  # one week unreachable
    assert any(s.daily is not None for s in samples)
    assert any(s.daily is None for s in samples)
    assert not any(s.complete for s in samples)


def test_series_too_short():
    series = series_from_counts(random_counts(20, 3, seed=5))
    with pytest.raises(SeriesTooShort):
        list(mx.build_windows(series, CFG))
    with pytest.raises(ConfigError):
        list(mx.build_windows(series_from_counts(random_counts(100, 3), delta=10), CFG))


def exportable_counts(n_complete=1000, n_cells=3, seed=6):
    # First complete target is 2016+15; last is T-1-12.
    t_total = 2016 + 15 + n_complete + 12
    return random_counts(t_total, n_cells, seed=seed)


def test_export_split_sizes_and_chronology(tmp_path):
    counts = exportable_counts(1000)
    series = series_from_counts(counts)
    manifest = mx.export_dataset(series, CFG, (0.7, 0.1, 0.2), tmp_path)
    split = manifest["splits"]
    assert (split["train"]["samples"], split["val"]["samples"], split["test"]["samples"]) == (
        700,
        100,
        200,
    )
    assert split["train"]["target_epoch_range"][1] < split["val"]["target_epoch_range"][0]
    assert split["val"]["target_epoch_range"][1] < split["test"]["target_epoch_range"][0]
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == manifest


def test_export_round_trip_bit_exact(tmp_path):
    counts = exportable_counts(60, n_cells=4, seed=7)
    series = series_from_counts(counts)
    mx.export_dataset(series, CFG, (0.5, 0.25, 0.25), tmp_path)
    complete = [s for s in mx.build_windows(series, CFG) if s.complete]
    read = mx.read_dataset(tmp_path / "train.bin")
    assert read["n"] == 15 and read["n_cells"] == 4
    assert read["horizons"] == [1, 3, 6, 12]
    n_train = read["current"].shape[0]
    for i in (0, n_train - 1):
        s = complete[i]
        assert read["target_epochs"][i] == s.target_epoch
        assert np.array_equal(read["current"][i], s.current.astype(np.float32))
        assert np.array_equal(read["daily"][i], s.daily.astype(np.float32))
        assert np.array_equal(read["weekly"][i], s.weekly.astype(np.float32))
        for j, h in enumerate((1, 3, 6, 12)):
            assert np.array_equal(read["labels"][i, j], s.labels[h].astype(np.float32))


def test_export_hashes_track_content(tmp_path):
    counts = exportable_counts(50, seed=8)
    m1 = mx.export_dataset(series_from_counts(counts), CFG, (0.6, 0.2, 0.2), tmp_path / "a")
    m2 = mx.export_dataset(series_from_counts(counts), CFG, (0.6, 0.2, 0.2), tmp_path / "b")
    assert m1["splits"] == m2["splits"]  # identical input, identical hashes
    for name in ("train", "val", "test"):
        assert (tmp_path / "a" / f"{name}.bin").read_bytes() == (
            tmp_path / "b" / f"{name}.bin"
        ).read_bytes()
    changed = counts.copy()
    changed[-5, 0] += 1  # lands in the test split's label region
    m3 = mx.export_dataset(series_from_counts(changed), CFG, (0.6, 0.2, 0.2), tmp_path / "c")
    assert m3["splits"]["test"]["sha256"] != m2["splits"]["test"]["sha256"]
    assert m3["splits"]["train"]["sha256"] == m2["splits"]["train"]["sha256"]


def test_export_validation(tmp_path):
    counts = exportable_counts(10, seed=9)
    series = series_from_counts(counts)
    with pytest.raises(ConfigError):
        mx.export_dataset(series, CFG, (0.5, 0.5, 0.5), tmp_path)
    with pytest.raises(EmptySplit):
        mx.export_dataset(series, CFG, (0.98, 0.01, 0.01), tmp_path)
    short = series_from_counts(random_counts(500, 3, seed=10))
    with pytest.raises(SeriesTooShort):
        mx.export_dataset(short, CFG, (0.7, 0.15, 0.15), tmp_path)


def test_scales_come_from_training_epochs_only(tmp_path):
    counts = exportable_counts(100, n_cells=2, seed=11).astype(np.int64)
    counts[:, 1] = 0  # an always-empty cell
    counts[-20:, 0] = 3000  # spike only inside the test split's epochs
    counts[: -20, 0] = np.minimum(counts[:-20, 0], 40)
    series = series_from_counts(counts.astype(np.uint16))
    manifest = mx.export_dataset(series, CFG, (0.6, 0.2, 0.2), tmp_path)
    assert manifest["scales"][0] <= 40  # spike excluded
    assert manifest["scales"][1] == 1.0  # floor for empty cells


def test_read_dataset_rejects_corruption(tmp_path):
    counts = exportable_counts(10, seed=12)
    mx.export_dataset(series_from_counts(counts), CFG, (0.6, 0.2, 0.2), tmp_path)
    path = tmp_path / "train.bin"
    data = path.read_bytes()
    with pytest.raises(DecodeError):
        mx.read_dataset(_write_tmp(tmp_path, b"XXXX" + data[4:]))
    with pytest.raises(DecodeError):
        mx.read_dataset(_write_tmp(tmp_path, data[:-8]))


def _write_tmp(tmp_path, blob: bytes):
    p = tmp_path / "corrupt.bin"
    p.write_bytes(blob)
    return p
