"""Input checks shared by the estimators."""
from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

__all__ = ["check_positive", "check_nonnegative", "check_counts", "check_xy", "check_power_points"]


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be finite and > 0, got {value!r}")
    return value


def check_nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value >= 0):
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def check_counts(counts, *, ndim: int = 1) -> np.ndarray:
    """Finite, non-negative count array (1-D trace or 2-D stack of traces)."""
    a = np.asarray(counts, dtype=float)
    if a.size == 0:
        return a.reshape((0,) * ndim)
    a = check_array(a, ensure_2d=False, allow_nd=False, dtype=float, ensure_min_samples=1)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D count array, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("counts must be >= 0")
    return a


def check_xy(x, y, *, min_points: int = 1) -> tuple[np.ndarray, np.ndarray]:
    x = check_array(np.asarray(x, dtype=float).reshape(-1, 1), dtype=float,
                    ensure_min_samples=min_points).ravel()
    y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), dtype=float,
                    ensure_min_samples=min_points).ravel()
    check_consistent_length(x, y)
    return x, y


def check_power_points(powers, values) -> tuple[np.ndarray, np.ndarray]:
    """Validate (power, value) pairs for a log-log fit."""
    x, y = check_xy(powers, values, min_points=3)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs strictly positive powers and values")
    if np.ptp(np.log(x)) == 0:
        raise ValueError("power-law fit needs at least two distinct powers")
    return x, y
