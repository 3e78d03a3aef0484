"""Input checks for the estimator API, in the spirit of ``check_array``."""
from __future__ import annotations

import numpy as np

from .errors import NotFittedError, ShapeError


def check_images(images, n_views: int | None = None, size: int | None = None) -> np.ndarray:
    """Coerce to float32 ``[B, N, S, S, 3]`` (a single ``[N, S, S, 3]`` gains a batch axis)."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[-1] != 3:
        raise ShapeError(f"images must be [B, N, S, S, 3], got {arr.shape}")
    if arr.shape[2] != arr.shape[3]:
        raise ShapeError(f"views must be square, got {arr.shape[2]}x{arr.shape[3]}")
    if n_views is not None and arr.shape[1] != n_views:
        raise ShapeError(f"expected {n_views} views, got {arr.shape[1]}")
    if size is not None and arr.shape[2] != size:
        raise ShapeError(f"expected {size}x{size} views, got {arr.shape[2]}x{arr.shape[3]}")
    if not np.isfinite(arr).all():
        raise ValueError("images contain NaN or Inf")
    return np.clip(arr, 0.0, 1.0)


def check_instructions(instr, batch: int, vocab: int | None = None) -> np.ndarray:
    arr = np.asarray(instr)
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (batch, arr.shape[0]))
    if arr.ndim != 2 or arr.shape[0] != batch:
        raise ShapeError(f"instructions must be [{batch}, L], got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError("instruction ids must be integers")
    if arr.min() < 0 or (vocab is not None and arr.max() >= vocab):
        raise ValueError("instruction id outside the vocabulary")
    return arr.astype(np.int64)


def check_states(states, batch: int, d_state: int) -> np.ndarray:
    arr = np.asarray(states, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.shape != (batch, d_state):
        raise ShapeError(f"states must be [{batch}, {d_state}], got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("states contain NaN or Inf")
    return arr


def check_dataset(ds) -> None:
    for attr in ("images", "instructions", "states", "actions"):
        if not hasattr(ds, attr):
            raise TypeError(f"training data must provide .{attr}")
    n = len(ds.actions)
    if n == 0:
        raise ValueError("empty training set")
    for attr in ("images", "instructions", "states"):
        if len(getattr(ds, attr)) != n:
            raise ShapeError(f"{attr} has {len(getattr(ds, attr))} rows, actions has {n}")
    if not (np.isfinite(ds.actions).all() and np.isfinite(ds.states).all()):
        raise ValueError("training data contains NaN or Inf")


def check_is_fitted(estimator, attr: str = "model_") -> None:
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit() first")
