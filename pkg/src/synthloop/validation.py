"""Small input-validation helpers shared by the estimator-style APIs."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_image_batch(X, expected_hw=(128, 256)) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != tuple(expected_hw):
        raise ValidationError(f"expected images shaped (n, {expected_hw[0]}, {expected_hw[1]}), got {X.shape}")
    return X


def check_finite(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values", field=name)
    return arr


def check_same_length(**arrays) -> int:
    lengths = {k: len(v) for k, v in arrays.items()}
    if len(set(lengths.values())) > 1:
        raise ValidationError(f"length mismatch: {lengths}")
    return next(iter(lengths.values())) if lengths else 0
