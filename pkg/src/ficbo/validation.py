"""Lightweight input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Convert to a float64 ndarray, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_matrix(x, name: str = "X") -> np.ndarray:
    """Validate a 2-d float matrix; 1-d input is promoted to a column."""
    arr = as_float_array(x, name)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


def check_vector(x, name: str = "y") -> np.ndarray:
    arr = as_float_array(x, name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {arr.shape}")
    return arr


def check_consistent_length(a: np.ndarray, b: np.ndarray, names: str = "X, y") -> None:
    if len(a) != len(b):
        raise ValueError(f"{names} have inconsistent lengths: {len(a)} vs {len(b)}")


def check_same_dim(a: np.ndarray, b: np.ndarray, names: str = "a, b") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"{names} have mismatched dimension: {a.shape[-1]} vs {b.shape[-1]}"
        )
