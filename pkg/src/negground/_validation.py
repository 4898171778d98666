"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import DimensionMismatch, EmptySequence, NonFiniteInput


def check_embeddings(emb, n_rows=None, name="embeddings") -> np.ndarray:
    """Validate an (n, d) embedding matrix and return it as a float array.

    32- and 64-bit inputs keep their dtype; anything else becomes float64.
    """
    arr = np.asarray(emb)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptySequence(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise DimensionMismatch(f"{name} has {arr.shape[0]} rows but caption has {n_rows} tokens")
    if not np.isfinite(arr).all():
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return arr


def check_vector(x, d=None, name="x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionMismatch(f"{name} has length {arr.shape[0]}, expected {d}")
    if not np.isfinite(arr).all():
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return arr


def check_positive(value, name, strict=True) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        raise ValueError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value}")
    return value
