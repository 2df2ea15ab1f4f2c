"""Shared fixtures: datasets produced by the aggregation pipeline's CLI.

The forecaster consumes only the exported binary dataset plus manifest, so
fixtures shell out to the producer instead of importing it; that keeps the
file format the sole coupling between the two packages.
"""

import subprocess
import sys

import pytest

from flowcast.data import load_dataset


def export_dataset(root, config_text: str):
    config = root / "export.cfg"
    config.write_text(config_text)
    out = root / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "privaflow.cli", "export",
         "--config", str(config), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"dataset export failed:\n{proc.stdout}\n{proc.stderr}")
    return out / "dataset"


# Half-hour epochs shrink a week to 336 epochs, so this stays around one
# second while still exercising every split.
TINY_CONFIG = """\
drivers = 25
cells = 6
epochs = 420
seed = 5
delta_minutes = 30
window_n = 3
horizons = 1,3
k_anon = 2
"""


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    return export_dataset(tmp_path_factory.mktemp("tiny"), TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


# Three weeks of five-minute epochs with a fleet large enough that per-cell
# counts dominate sampling noise; percentage errors then reflect model
# quality rather than irreducible fleet randomness.
ACCEPTANCE_CONFIG = """\
drivers = 2000
cells = 12
epochs = 6100
seed = 777
delta_minutes = 5
window_n = 15
horizons = 1,3,6,12
attraction_amp = 0.2
"""


@pytest.fixture(scope="session")
def acceptance_dataset_dir(tmp_path_factory):
    return export_dataset(tmp_path_factory.mktemp("acceptance"), ACCEPTANCE_CONFIG)
