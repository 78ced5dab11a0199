"""Input validation helpers used at estimator and operation boundaries.

All array-accepting entry points funnel through these so that shape or
finiteness violations fail with a clear message instead of propagating
bad values into the numerics.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError


def as_matrix(x, name: str = "X", n_cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally enforcing a column count."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ValueError(
            f"{name} must have {n_cols} columns, got {arr.shape[1]}"
        )
    check_finite(arr, name)
    return arr


def as_vector(x, name: str = "x", size: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float64 array of optional fixed size."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have {size} entries, got {arr.size}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        n_bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericalError(f"{name} contains {n_bad} non-finite values")


def check_unit_box(x: np.ndarray, name: str = "x") -> None:
    """Require every entry to lie in [0, 1]."""
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]^d, got range "
                         f"[{x.min():g}, {x.max():g}]")


def check_keep_rate(keep_rate: float) -> float:
    keep_rate = float(keep_rate)
    if not (0.0 < keep_rate <= 1.0):
        raise ValueError(f"keep_rate must be in (0, 1], got {keep_rate}")
    return keep_rate
