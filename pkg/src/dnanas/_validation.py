from __future__ import annotations

import numpy as np


def check_images(X, channels: int | None = None, size: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a finite float32 NCHW array, optionally checking channels and spatial size."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"{name} must be 4-D (N, C, H, W), got shape {X.shape}")
    if not np.issubdtype(X.dtype, np.floating):
        raise ValueError(f"{name} must hold floats, got {X.dtype}")
    X = np.ascontiguousarray(X, dtype=np.float32)
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"{name} has {X.shape[1]} channels, expected {channels}")
    if size is not None and X.shape[2:] != (size, size):
        raise ValueError(f"{name} is {X.shape[2]}x{X.shape[3]}, expected {size}x{size}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf")
    return X


def check_labels(y, n: int, class_count: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integers")
    if n and (y.min() < 0 or y.max() >= class_count):
        raise ValueError(f"labels must lie in [0, {class_count})")
    return y.astype(np.int64)


def check_pair(X, Y, name: str = "features") -> tuple[np.ndarray, np.ndarray]:
    X = check_images(X, name=f"{name} input")
    Y = check_images(Y, name=f"{name} target")
    if len(X) != len(Y):
        raise ValueError(f"{name}: {len(X)} inputs but {len(Y)} targets")
    return X, Y
