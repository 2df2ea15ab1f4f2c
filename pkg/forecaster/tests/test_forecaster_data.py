"""Dataset reader: format parsing, integrity checks, normalization."""

import json
import shutil

import numpy as np
import pytest

from flowcast.data import load_dataset, normalized_inputs, read_split
from flowcast.errors import DataError


def test_load_matches_manifest(tiny_dataset_dir, tiny_dataset):
    manifest = json.loads((tiny_dataset_dir / "manifest.json").read_text())
    ds = tiny_dataset
    assert ds.n == manifest["n"] == 3
    assert list(ds.horizons) == manifest["horizons"] == [1, 3]
    assert ds.n_cells == len(manifest["scales"])
    for name, entry in manifest["splits"].items():
        split = ds.splits[name]
        assert len(split) == entry["samples"]
        lo, hi = entry["target_epoch_range"]
        assert split.target_epochs[0] == lo and split.target_epochs[-1] == hi
        n, L = ds.n, ds.n_cells
        assert split.current.shape == (len(split), L, n + 1)
        assert split.daily.shape == split.weekly.shape == (len(split), L, 2 * n + 1)
        assert split.labels.shape == (len(split), len(ds.horizons), L)


def test_splits_are_chronological(tiny_dataset):
    train, val, test = (tiny_dataset.splits[k] for k in ("train", "val", "test"))
    assert train.target_epochs.max() < val.target_epochs.min()
    assert val.target_epochs.max() < test.target_epochs.min()
    for split in (train, val, test):
        assert np.all(np.diff(split.target_epochs) > 0)


def test_corrupt_split_is_rejected(tiny_dataset_dir, tmp_path):
    broken = tmp_path / "broken"
    shutil.copytree(tiny_dataset_dir, broken)
    path = broken / "test.bin"
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(raw)
    with pytest.raises(DataError, match="sha256"):
        load_dataset(broken)


def test_truncated_split_is_rejected(tiny_dataset_dir, tmp_path):
    data = (tiny_dataset_dir / "train.bin").read_bytes()
    stub = tmp_path / "short.bin"
    stub.write_bytes(data[:-5])
    with pytest.raises(DataError, match="length"):
        read_split(stub)


def test_non_dataset_file_is_rejected(tmp_path):
    bogus = tmp_path / "bogus.bin"
    bogus.write_bytes(b"not a dataset at all")
    with pytest.raises(DataError, match="not a flow-matrix"):
        read_split(bogus)


def test_missing_manifest_is_rejected(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_dataset(tmp_path)


def test_normalized_inputs_in_unit_range(tiny_dataset):
    ds = tiny_dataset
    for split in ds.splits.values():
        arrays = normalized_inputs(split, ds.scales)
        for key in ("current", "daily", "weekly"):
            assert arrays[key].dtype == np.float32
            assert arrays[key].min() >= 0.0 and arrays[key].max() <= 1.0
        assert np.allclose(
            arrays["targets"] * ds.scales.astype(np.float32)[None, None, :],
            split.labels,
            rtol=1e-6,
            atol=1e-4,
        )
        assert arrays["labels"] is split.labels


def test_train_scales_cover_train_counts(tiny_dataset):
    # Scales come from train-visible epochs, so train inputs saturate the
    # unit interval without clipping away information.
    train = tiny_dataset.splits["train"]
    by_cell = tiny_dataset.scales[None, :, None]
    assert np.all(train.current <= by_cell + 1e-9)
