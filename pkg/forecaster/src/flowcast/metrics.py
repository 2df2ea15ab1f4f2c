"""Forecast error measures over raw (de-normalized) densities.

MAPE is undefined where the true value is zero; such entries are excluded
and their count reported alongside the value, so sparse cells degrade the
statistic visibly instead of silently.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyTestSet


def _flat(predicted, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise EmptyTestSet("no samples to evaluate")
    return p, t


def mae(predicted, truth) -> float:
    p, t = _flat(predicted, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(predicted, truth) -> float:
    p, t = _flat(predicted, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mape(predicted, truth) -> tuple[float, int]:
    """Mean absolute percentage error and the excluded zero-truth count."""
    p, t = _flat(predicted, truth)
    keep = t != 0
    excluded = int(np.sum(~keep))
    if not np.any(keep):
        return math.nan, excluded
    value = float(np.mean(np.abs((p[keep] - t[keep]) / t[keep])) * 100.0)
    return value, excluded


def score(predicted, truth) -> dict:
    """All three measures as one JSON-ready record."""
    mape_value, excluded = mape(predicted, truth)
    return {
        "mae": mae(predicted, truth),
        "mape": None if math.isnan(mape_value) else mape_value,
        "rmse": rmse(predicted, truth),
        "mape_excluded_count": excluded,
    }
