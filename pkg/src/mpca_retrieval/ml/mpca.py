# src/mpca_retrieval/ml/mpca.py
# Single-pass ("simplified") multilinear PCA for third-order feature tensors:
#   center -> per-mode total scatter -> per-mode eigendecomposition -> truncated projections.
# No alternating refinement: each S^(k) is computed once from the centered originals.
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from mpca_retrieval.errors import ArgumentError, NumericError, ShapeError
from mpca_retrieval.ml.eigen import Spectrum, sym_eig
from mpca_retrieval.ml.tensor_ops import (
    Dims, TensorBatch, as_batch, as_tensor3, center, check_dims, check_mode,
    mode_product, vectorize_batch,
)

logger = logging.getLogger(__name__)

NEGATIVE_EIG_TOL = 1e-8
CCR_SLACK = 1e-12

# Verbatim dimension table for 6x6x256 pooling maps at CR 1/3, 1/2, 2/3.
# Row three keeps d3=170 although round(2/3*256) is 171.
REFERENCE_DIMS: Dict[str, Dims] = {
    "cr33": (2, 2, 85),
    "cr50": (3, 3, 128),
    "cr67": (4, 4, 170),
}

SpectrumLike = Union[Spectrum, Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class MpcaModel:
    in_dims: Dims
    out_dims: Dims
    mean: np.ndarray                                   # float64, in_dims
    projections: Tuple[np.ndarray, np.ndarray, np.ndarray]  # V_k, I_k x d_k
    spectra: Tuple[Spectrum, Spectrum, Spectrum]       # full, length I_k

    def with_out_dims(self, out_dims: Sequence[int]) -> "MpcaModel":
        """Same fit with fewer kept components; eigenvectors do not depend on d_k."""
        out_dims = _check_out_dims(self.in_dims, out_dims)
        if any(out_dims[k] > self.out_dims[k] for k in range(3)):
            raise ArgumentError(f"cannot widen a model from {self.out_dims} to {out_dims}; refit instead")
        proj = tuple(_readonly(self.projections[k][:, :out_dims[k]].copy()) for k in range(3))
        return replace(self, out_dims=out_dims, projections=proj)  # type: ignore[arg-type]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_out_dims(in_dims: Sequence[int], out_dims: Sequence[int]) -> Dims:
    in_dims = check_dims(in_dims)
    out = tuple(int(d) for d in out_dims)
    if len(out) != 3:
        raise ArgumentError(f"out_dims must have three entries, got {out}")
    for k in range(3):
        if not 1 <= out[k] <= in_dims[k]:
            raise ArgumentError(f"d{k + 1}={out[k]} must lie in [1, {in_dims[k]}]")
    return out  # type: ignore[return-value]


# -------------------------- scatter --------------------------

def _chunk_scatter(chunk: np.ndarray, axis: int) -> np.ndarray:
    # columns are all (sample, other-index) pairs; S is invariant to their order
    t = np.moveaxis(chunk, axis, 0).reshape(chunk.shape[axis], -1)
    return t @ t.T


def scatter_matrix(centered: TensorBatch, mode: int, workers: int = 1,
                   chunk_size: int = 1024) -> np.ndarray:
    """S^(k) = sum_i U_i U_i^T with U_i the mode-k unfolding of each centered sample.

    Samples are reduced in fixed chunks; chunk partials are summed in chunk order, so
    the result does not depend on `workers`.
    """
    batch = np.asarray(as_batch(centered), dtype=np.float64)
    k = check_mode(mode)
    chunk_size = max(1, int(chunk_size))
    chunks = [batch[i:i + chunk_size] for i in range(0, batch.shape[0], chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _chunk_scatter(c, k), chunks))
    else:
        parts = [_chunk_scatter(c, k) for c in chunks]
    s = np.zeros((batch.shape[k], batch.shape[k]), dtype=np.float64)
    for part in parts:
        s += part
    return s


# -------------------------- fit / project --------------------------

def fit(samples: TensorBatch, out_dims: Sequence[int], workers: int = 1,
        chunk_size: int = 1024, solver: str = "jacobi") -> MpcaModel:
    t0 = time.time()
    batch = as_batch(samples)
    if batch.shape[0] < 2:
        raise ArgumentError(f"MPCA needs at least 2 samples, got {batch.shape[0]}")
    in_dims = check_dims(batch.shape[1:])
    out_dims = _check_out_dims(in_dims, out_dims)

    centered, mean = center(batch)
    bases, spectra = [], []
    for k in (1, 2, 3):
        s = scatter_matrix(centered, k, workers=workers, chunk_size=chunk_size)
        spectrum, vecs = sym_eig(s, method=solver, name=f"S({k})")
        bases.append(vecs); spectra.append(spectrum)

    projections = tuple(_readonly(bases[k][:, :out_dims[k]].copy()) for k in range(3))
    model = MpcaModel(in_dims=in_dims, out_dims=out_dims, mean=_readonly(mean),
                      projections=projections, spectra=tuple(spectra))  # type: ignore[arg-type]
    logger.info("[mpca] fit n=%d in=%s out=%s dt=%dms",
                batch.shape[0], in_dims, out_dims, int((time.time() - t0) * 1000))
    return model


def project(model: MpcaModel, x: np.ndarray) -> np.ndarray:
    """Y = (x - mean) x1 V1^T x2 V2^T x3 V3^T, float64 with dims out_dims."""
    x = as_tensor3(x)
    if tuple(x.shape) != tuple(model.in_dims):
        raise ShapeError(f"tensor dims {x.shape} do not match model dims {model.in_dims}")
    y = np.asarray(x, dtype=np.float64) - model.mean
    for k in (1, 2, 3):
        y = mode_product(y, model.projections[k - 1].T, k)
    return y


def project_batch(model: MpcaModel, samples: TensorBatch) -> np.ndarray:
    batch = as_batch(samples)
    if tuple(batch.shape[1:]) != tuple(model.in_dims):
        raise ShapeError(f"tensor dims {batch.shape[1:]} do not match model dims {model.in_dims}")
    v1, v2, v3 = model.projections
    xc = batch.astype(np.float64) - model.mean
    return np.einsum("nabc,ai,bj,ck->nijk", xc, v1, v2, v3, optimize=True)


def reconstruct(model: MpcaModel, y: np.ndarray) -> np.ndarray:
    """Back-projection y x1 V1 x2 V2 x3 V3 + mean."""
    y = as_tensor3(np.asarray(y, dtype=np.float64))
    if tuple(y.shape) != tuple(model.out_dims):
        raise ShapeError(f"reduced dims {y.shape} do not match model dims {model.out_dims}")
    for k in (1, 2, 3):
        y = mode_product(y, model.projections[k - 1], k)
    return y + model.mean


# -------------------------- contribution rates --------------------------

def _eigenvalues(spectrum: SpectrumLike) -> np.ndarray:
    w = spectrum.eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] == 0:
        raise ArgumentError("spectrum must be a non-empty list of eigenvalues")
    lam_max = float(np.max(w))
    if lam_max > 0 and float(np.min(w)) < -NEGATIVE_EIG_TOL * lam_max:
        raise NumericError(f"spectrum has a negative eigenvalue {float(np.min(w)):.6g} "
                           f"beyond -{NEGATIVE_EIG_TOL:g} * {lam_max:.6g}")
    return np.clip(w, 0.0, None)


def ccr(spectrum: SpectrumLike, d: int) -> float:
    """Cumulative contribution rate of the leading d eigenvalues."""
    w = _eigenvalues(spectrum)
    if not 1 <= int(d) <= w.shape[0]:
        raise ArgumentError(f"d={d} must lie in [1, {w.shape[0]}]")
    total = float(np.sum(w))
    if total <= 0.0:
        raise ArgumentError("spectrum is all zero; contribution rate is undefined")
    if int(d) == w.shape[0]:
        return 1.0
    return float(np.sum(w[:int(d)])) / total


def weighted_ccr(ccrs: Sequence[float], in_dims: Sequence[int]) -> float:
    """Per-mode rates weighted by I_k / (I1 + I2 + I3)."""
    r = [float(c) for c in ccrs]
    dims = check_dims(in_dims)
    if len(r) != 3:
        raise ArgumentError(f"need three per-mode rates, got {len(r)}")
    total = float(sum(dims))
    return sum(r[k] * dims[k] / total for k in range(3))


def mode_ccrs(model: MpcaModel) -> Tuple[float, float, float]:
    return tuple(ccr(model.spectra[k], model.out_dims[k]) for k in range(3))  # type: ignore[return-value]


def select_dims_by_cr(in_dims: Sequence[int], cr: float) -> Dims:
    """d_k = round(cr * I_k), halves away from zero, clamped to [1, I_k]."""
    dims = check_dims(in_dims)
    cr = float(cr)
    if not 0.0 < cr <= 1.0:
        raise ArgumentError(f"compression rate must lie in (0, 1], got {cr}")
    return tuple(min(i, max(1, math.floor(cr * i + 0.5))) for i in dims)  # type: ignore[return-value]


def select_dim_for_ccr(spectrum: SpectrumLike, target: float) -> int:
    """Smallest d whose CCR reaches target (relative slack 1e-12 for rounding)."""
    target = float(target)
    if not 0.0 < target <= 1.0:
        raise ArgumentError(f"target CCR must lie in (0, 1], got {target}")
    w = _eigenvalues(spectrum)
    total = float(np.sum(w))
    if total <= 0.0:
        raise ArgumentError("spectrum is all zero; contribution rate is undefined")
    cum = np.cumsum(w) / total
    hit = np.nonzero(cum >= target - CCR_SLACK)[0]
    return int(hit[0]) + 1 if hit.size else int(w.shape[0])


def resolve_out_dims(in_dims: Sequence[int], cr: Optional[float] = None,
                     dims: Optional[Sequence[int]] = None) -> Dims:
    """Exactly one of cr / dims; explicit dims are taken verbatim."""
    if (cr is None) == (dims is None):
        raise ArgumentError("give exactly one of a compression rate or explicit dims")
    if dims is not None:
        return _check_out_dims(in_dims, dims)
    return select_dims_by_cr(in_dims, cr)  # type: ignore[arg-type]


# -------------------------- estimator --------------------------

class MpcaReducer(BaseEstimator, TransformerMixin):
    """scikit-learn wrapper: fit on (N, I1, I2, I3) tensors, transform to vectorized Y."""

    def __init__(self, out_dims: Optional[Sequence[int]] = None, cr: Optional[float] = None,
                 workers: int = 1, chunk_size: int = 1024, solver: str = "jacobi") -> None:
        self.out_dims = out_dims
        self.cr = cr
        self.workers = workers
        self.chunk_size = chunk_size
        self.solver = solver

    def fit(self, X, y=None):
        batch = as_batch(X)
        dims = resolve_out_dims(batch.shape[1:], cr=self.cr, dims=self.out_dims)
        self.model_ = fit(batch, dims, workers=self.workers,
                          chunk_size=self.chunk_size, solver=self.solver)
        return self

    def transform(self, X):
        return vectorize_batch(project_batch(self.model_, X))

    @property
    def ccrs_(self) -> Tuple[float, float, float]:
        return mode_ccrs(self.model_)

    @property
    def weighted_ccr_(self) -> float:
        return weighted_ccr(self.ccrs_, self.model_.in_dims)
