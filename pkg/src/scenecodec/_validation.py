"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_points(points) -> np.ndarray:
    """Coerce to a finite (n, 3) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


def as_vector3(value, name: str = "vector") -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_fitted(obj, attr: str) -> None:
    if not hasattr(obj, attr):
        raise RuntimeError(
            f"{type(obj).__name__} is not fitted yet; call fit() or load a checkpoint"
        )
