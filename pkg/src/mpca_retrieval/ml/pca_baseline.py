# src/mpca_retrieval/ml/pca_baseline.py
# Vector PCA baseline; dimension chosen directly or by matching a target CCR.
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from mpca_retrieval.errors import ArgumentError, CapacityError, ShapeError
from mpca_retrieval.ml.eigen import Spectrum, sym_eig
from mpca_retrieval.ml.mpca import ccr, select_dim_for_ccr

logger = logging.getLogger(__name__)

MAX_IN_DIM = 4096

Vectors = Union[np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True, eq=False)
class PcaModel:
    in_dim: int
    out_dim: int
    mean: np.ndarray        # in_dim
    components: np.ndarray  # in_dim x out_dim, orthonormal columns
    spectrum: Spectrum      # full, length in_dim

    @property
    def ccr(self) -> float:
        return ccr(self.spectrum, self.out_dim)


def _as_vectors(vectors: Vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"expected an (N, D) array of vectors, got shape {v.shape}")
    return v


def fit_pca(vectors: Vectors, out_dim: Optional[int] = None, target_ccr: Optional[float] = None,
            solver: str = "jacobi") -> PcaModel:
    """Center, eigendecompose sum_i (v_i - mean)(v_i - mean)^T, keep the top components."""
    t0 = time.time()
    if (out_dim is None) == (target_ccr is None):
        raise ArgumentError("give exactly one of out_dim or target_ccr")
    v = _as_vectors(vectors)
    n, d = v.shape
    if n < 2:
        raise ArgumentError(f"PCA needs at least 2 vectors, got {n}")
    if d > MAX_IN_DIM:
        raise CapacityError(f"input dimension {d} exceeds the PCA scatter limit of {MAX_IN_DIM}")

    mean = v.mean(axis=0)
    centered = v - mean
    spectrum, vecs = sym_eig(centered.T @ centered, method=solver, name="PCA scatter")

    if target_ccr is not None:
        out_dim = select_dim_for_ccr(spectrum, target_ccr)
    if not 1 <= int(out_dim) <= d:
        raise ArgumentError(f"out_dim={out_dim} must lie in [1, {d}]")
    out_dim = int(out_dim)

    components = vecs[:, :out_dim].copy()
    mean.setflags(write=False); components.setflags(write=False)
    logger.info("[pca] fit n=%d in=%d out=%d dt=%dms", n, d, out_dim, int((time.time() - t0) * 1000))
    return PcaModel(in_dim=d, out_dim=out_dim, mean=mean, components=components, spectrum=spectrum)


def project_pca(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """components^T (v - mean); accepts one vector or an (N, in_dim) batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.in_dim or v.ndim not in (1, 2):
        raise ShapeError(f"vector length {v.shape[-1] if v.ndim else 0} does not match model in_dim {model.in_dim}")
    return (v - model.mean) @ model.components


def reconstruct_pca(model: PcaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.out_dim:
        raise ShapeError(f"reduced length {z.shape[-1]} does not match model out_dim {model.out_dim}")
    return z @ model.components.T + model.mean


class PcaReducer(BaseEstimator, TransformerMixin):
    """scikit-learn wrapper over fit_pca / project_pca for (N, D) vectors."""

    def __init__(self, out_dim: Optional[int] = None, target_ccr: Optional[float] = None,
                 solver: str = "jacobi") -> None:
        self.out_dim = out_dim
        self.target_ccr = target_ccr
        self.solver = solver

    def fit(self, X, y=None):
        self.model_ = fit_pca(X, out_dim=self.out_dim, target_ccr=self.target_ccr, solver=self.solver)
        return self

    def transform(self, X):
        return project_pca(self.model_, X)
