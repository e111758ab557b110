# src/mpca_retrieval/ml/tensor_ops.py
# Third-order tensor helpers. Modes are 1-based (1, 2, 3) at the API, indices 0-based.
# Unfolding convention (i_k is the row):
#   mode 1 -> column i2 + I2*i3, mode 2 -> i1 + I1*i3, mode 3 -> i1 + I1*i2
from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np

from mpca_retrieval.errors import ArgumentError, NumericError, ShapeError

Dims = Tuple[int, int, int]
TensorBatch = Union[np.ndarray, Sequence[np.ndarray]]

MODES = (1, 2, 3)


def check_mode(mode: int) -> int:
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of 1, 2, 3, got {mode!r}")
    return int(mode)


def check_dims(dims: Sequence[int]) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ShapeError(f"tensor dims must be three positive integers, got {dims}")
    return dims  # type: ignore[return-value]


def as_tensor3(x: np.ndarray) -> np.ndarray:
    """Validate a single tensor; float inputs keep their dtype, others become float32."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a third-order tensor, got shape {x.shape}")
    check_dims(x.shape)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float32)
    return x


def as_batch(samples: TensorBatch) -> np.ndarray:
    """Stack samples into an (N, I1, I2, I3) array; empty or mixed dims are rejected."""
    if isinstance(samples, np.ndarray):
        batch = samples
        if batch.ndim == 3:
            batch = batch[np.newaxis]
        if batch.ndim != 4:
            raise ShapeError(f"expected (N, I1, I2, I3) samples, got shape {batch.shape}")
        if batch.shape[0] == 0:
            raise ArgumentError("sample list is empty")
        check_dims(batch.shape[1:])
        return batch
    samples = list(samples)
    if not samples:
        raise ArgumentError("sample list is empty")
    first = as_tensor3(samples[0]).shape
    for i, s in enumerate(samples):
        if np.shape(s) != first:
            raise ShapeError(f"sample {i} has dims {np.shape(s)}, expected {first}")
    return np.stack([as_tensor3(s) for s in samples])


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} produced non-finite values")
    return x


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-k unfolding: I_k rows, product of the other two dims as columns."""
    x = as_tensor3(x)
    k = check_mode(mode) - 1
    return np.reshape(np.moveaxis(x, k, 0), (x.shape[k], -1), order="F")


def fold(m: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of `unfold`: fold(unfold(x, k), k, x.shape) == x bit for bit."""
    dims = check_dims(dims)
    k = check_mode(mode) - 1
    m = np.asarray(m)
    total = dims[0] * dims[1] * dims[2]
    if m.ndim != 2 or m.shape != (dims[k], total // dims[k]):
        raise ShapeError(
            f"cannot fold matrix of shape {m.shape} along mode {k + 1} into dims {dims}; "
            f"expected ({dims[k]}, {total // dims[k]})"
        )
    moved = (dims[k],) + tuple(d for i, d in enumerate(dims) if i != k)
    return np.ascontiguousarray(np.moveaxis(np.reshape(m, moved, order="F"), 0, k))


def mode_product(x: np.ndarray, v: np.ndarray, mode: int) -> np.ndarray:
    """x ×_k v = fold(v · unfold(x, k)); I_k is replaced by v.rows. Keeps x's dtype."""
    x = as_tensor3(x)
    v = np.asarray(v, dtype=np.float64)
    k = check_mode(mode)
    if v.ndim != 2 or v.shape[1] != x.shape[k - 1]:
        raise ShapeError(
            f"mode-{k} product needs a matrix with {x.shape[k - 1]} columns, got shape {v.shape}"
        )
    out = v @ unfold(x, k).astype(np.float64)
    dims = list(x.shape)
    dims[k - 1] = v.shape[0]
    return _check_finite(fold(out, k, dims).astype(x.dtype, copy=False), "mode product")


def mean_tensor(samples: TensorBatch) -> np.ndarray:
    """Entrywise sample mean, accumulated in float64."""
    batch = as_batch(samples)
    return _check_finite(np.mean(batch, axis=0, dtype=np.float64), "mean")


def center(samples: TensorBatch) -> Tuple[np.ndarray, np.ndarray]:
    """Return (X_i - mean stacked as float64, mean)."""
    batch = as_batch(samples)
    mean = mean_tensor(batch)
    return batch.astype(np.float64) - mean, mean


def vectorize(x: np.ndarray) -> np.ndarray:
    """Rows of the mode-3 unfolding, concatenated in order."""
    return unfold(x, 3).reshape(-1)


def vectorize_batch(batch: np.ndarray) -> np.ndarray:
    """`vectorize` for every tensor of an (N, I1, I2, I3) array, giving (N, I1*I2*I3)."""
    batch = as_batch(batch)
    n = batch.shape[0]
    # per sample: move i3 first, then i1 + I1*i2 ordering inside each row
    moved = np.transpose(batch, (0, 3, 2, 1))
    return np.ascontiguousarray(moved.reshape(n, -1))


def frobenius_sq(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(x * x))
