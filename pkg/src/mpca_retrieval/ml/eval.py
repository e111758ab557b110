# src/mpca_retrieval/ml/eval.py
# End-to-end retrieval runs: reduce -> hash -> index -> MAP, plus the MPCA/PCA comparison
# at matched CCR and the CR x code-length sweep.
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import FunctionTransformer

from mpca_retrieval.errors import ArgumentError, MpcaRetrievalError, PipelineError
from mpca_retrieval.hashing.lsh import LshEncoder, encode_batch, fit_hash
from mpca_retrieval.hashing.rng import MASK64
from mpca_retrieval.ml import mpca
from mpca_retrieval.ml.model_selector import REDUCER_REGISTRY, make_reducer
from mpca_retrieval.ml.pca_baseline import fit_pca, project_pca
from mpca_retrieval.ml.tensor_ops import vectorize_batch
from mpca_retrieval.retrieval.index import build_index_arrays
from mpca_retrieval.retrieval.metrics import MapResult, evaluate_map
from mpca_retrieval.storage.formats import FeatureDataset

logger = logging.getLogger(__name__)

REPORT_KEYS = ("method", "dims", "ccr1", "ccr2", "ccr3", "ccr_w", "bits", "map",
               "fit_ms", "query_ms", "n_items", "seed", "topk", "no_relevant")
TIMING_KEYS = ("fit_ms", "query_ms")
NA = "na"

T = TypeVar("T")


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "mpca"
    cr: Optional[float] = None
    dims: Optional[Tuple[int, int, int]] = None
    target_ccr: Optional[float] = None
    pca_dim: Optional[int] = None
    bits: int = 128
    seed: int = 0
    topk: Optional[int] = None
    workers: int = 1
    shards: int = 1
    chunk_size: int = 1024
    solver: str = "jacobi"

    def __post_init__(self) -> None:
        method = (self.method or "").lower()
        if method not in REDUCER_REGISTRY:
            raise ArgumentError(f"unknown reduction method {self.method!r}")
        object.__setattr__(self, "method", method)
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if int(self.bits) < 1:
            raise ArgumentError(f"bits must be >= 1, got {self.bits}")
        if not 0 <= int(self.seed) <= MASK64:
            raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.topk is not None and int(self.topk) < 1:
            raise ArgumentError(f"topk must be >= 1, got {self.topk}")
        if (self.cr is None) == (self.dims is None) and method == "mpca":
            raise ArgumentError("mpca needs exactly one of cr or dims")
        if method == "pca":
            sources = [self.cr is not None or self.dims is not None,
                       self.target_ccr is not None, self.pca_dim is not None]
            if sum(sources) != 1:
                raise ArgumentError("pca needs exactly one of target_ccr, pca_dim, or an mpca cr/dims to match")
            if self.cr is not None and self.dims is not None:
                raise ArgumentError("give cr or dims, not both")


@dataclass
class PipelineReport:
    method: str
    dims: Tuple[int, ...]
    ccrs: Tuple[float, ...]
    ccr_w: float
    bits: int
    map: float
    fit_ms: int
    query_ms: int
    n_items: int
    seed: int
    topk: Optional[int] = None
    no_relevant: int = 0
    pipeline: Optional[Pipeline] = field(default=None, repr=False, compare=False)

    def to_kv(self) -> Dict[str, str]:
        ccr = [f"{c:.12g}" for c in self.ccrs] + [NA] * (3 - len(self.ccrs))
        return {
            "method": self.method,
            "dims": ",".join(str(d) for d in self.dims),
            "ccr1": ccr[0], "ccr2": ccr[1], "ccr3": ccr[2],
            "ccr_w": f"{self.ccr_w:.12g}",
            "bits": str(self.bits),
            "map": f"{self.map:.12g}",
            "fit_ms": str(self.fit_ms),
            "query_ms": str(self.query_ms),
            "n_items": str(self.n_items),
            "seed": str(self.seed),
            "topk": NA if self.topk is None else str(self.topk),
            "no_relevant": str(self.no_relevant),
        }

    def to_text(self) -> str:
        ccr = ", ".join(f"{c:.1%}" for c in self.ccrs)
        lines = [
            f"method        : {self.method}",
            f"reduced dims  : {' x '.join(str(d) for d in self.dims)}",
            f"CCR per mode  : {ccr}",
            f"weighted CCR  : {self.ccr_w:.1%}",
            f"code length   : {self.bits} bits",
            f"MAP           : {self.map:.4f}" + (f" (top {self.topk})" if self.topk else ""),
            f"items         : {self.n_items}",
            f"fit / query   : {self.fit_ms} ms / {self.query_ms} ms",
        ]
        if self.no_relevant:
            lines.append(f"warning       : {self.no_relevant} queries had no relevant item")
        return "\n".join(lines)


def render_kv(kv: Dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in kv.items())


def parse_kv(text: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#") and "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _stage(name: str, fn: Callable[..., T], *args: Any, **kw: Any) -> T:
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except MpcaRetrievalError as e:
        logger.error("[pipeline] stage=%s failed: %s", name, e)
        raise PipelineError(name, e) from e


def _ms(t0: float) -> int:
    return int((time.perf_counter() - t0) * 1000)


def _mpca_reducer(config: PipelineConfig):
    return make_reducer("mpca", out_dims=config.dims, cr=config.cr, workers=config.workers,
                        chunk_size=config.chunk_size, solver=config.solver)


def pca_target_ccr(config: PipelineConfig, tensors: np.ndarray) -> Optional[float]:
    """Target CCR for a pca config; a cr/dims setting is matched to MPCA's weighted CCR."""
    if config.method != "pca" or config.pca_dim is not None:
        return None
    if config.target_ccr is not None:
        return float(config.target_ccr)
    matched = _stage("match", _mpca_reducer(config).fit, tensors)
    target = min(1.0, matched.weighted_ccr_)
    logger.info("[pipeline] pca target ccr matched to mpca ccr_w=%.4f", target)
    return target


def build_pipeline(config: PipelineConfig, target_ccr: Optional[float] = None) -> Pipeline:
    encoder = LshEncoder(bits=config.bits, seed=config.seed)
    if config.method == "mpca":
        return Pipeline([("reduce", _mpca_reducer(config)), ("hash", encoder)])
    reducer = make_reducer("pca", out_dim=config.pca_dim,
                           target_ccr=target_ccr if config.pca_dim is None else None,
                           solver=config.solver)
    return Pipeline([("vectorize", FunctionTransformer(vectorize_batch)),
                     ("reduce", reducer), ("hash", encoder)])


def _evaluate(dataset: FeatureDataset, codes: np.ndarray, config: PipelineConfig) -> MapResult:
    index = _stage("index", build_index_arrays, dataset.ids, dataset.labels, codes, config.bits)
    return _stage("evaluate", evaluate_map, index, dataset.ids, dataset.labels, codes,
                  topk=config.topk, shards=config.shards, bits=config.bits)


def run_pipeline(config: PipelineConfig, dataset: FeatureDataset) -> PipelineReport:
    """Reduce, hash, index and score every item as a query (self excluded)."""
    t0 = time.perf_counter()
    pipe = build_pipeline(config, target_ccr=pca_target_ccr(config, dataset.tensors))
    x: Any = dataset.tensors
    for name, step in pipe.steps:
        x = _stage(name, step.fit_transform, x)
    codes = x
    fit_ms = _ms(t0)

    reducer = pipe.named_steps["reduce"]
    if config.method == "mpca":
        model = reducer.model_
        dims: Tuple[int, ...] = model.out_dims
        ccrs: Tuple[float, ...] = _stage("report", lambda: reducer.ccrs_)
        ccr_w = mpca.weighted_ccr(ccrs, model.in_dims)
    else:
        model = reducer.model_
        dims = (model.out_dim,)
        ccrs = (_stage("report", lambda: model.ccr),)
        ccr_w = ccrs[0]

    t1 = time.perf_counter()
    result = _evaluate(dataset, codes, config)
    query_ms = _ms(t1)

    report = PipelineReport(method=config.method, dims=tuple(dims), ccrs=tuple(ccrs), ccr_w=float(ccr_w),
                            bits=config.bits, map=result.map, fit_ms=fit_ms, query_ms=query_ms,
                            n_items=len(dataset), seed=config.seed, topk=config.topk,
                            no_relevant=result.n_without_relevant, pipeline=pipe)
    logger.info("[pipeline] method=%s dims=%s bits=%d map=%.4f fit=%dms query=%dms",
                report.method, report.dims, report.bits, report.map, fit_ms, query_ms)
    return report


def compare_methods(config: PipelineConfig, dataset: FeatureDataset) -> Tuple[PipelineReport, PipelineReport]:
    """MPCA run, then PCA on the vectorized tensors at MPCA's weighted CCR."""
    mp = run_pipeline(replace(config, method="mpca", target_ccr=None, pca_dim=None), dataset)
    pc = run_pipeline(replace(config, method="pca", cr=None, dims=None, pca_dim=None,
                              target_ccr=min(1.0, mp.ccr_w)), dataset)
    return mp, pc


def comparison_kv(reports: Sequence[PipelineReport]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for r in reports:
        for k, v in r.to_kv().items():
            out[f"{r.method}.{k}"] = v
    return out


def sweep(dataset: FeatureDataset, crs: Sequence[float] = (1 / 3, 1 / 2, 2 / 3),
          bits: Sequence[int] = (64, 128), methods: Sequence[str] = ("mpca", "pca"),
          seed: int = 0, topk: Optional[int] = None, workers: int = 1,
          solver: str = "jacobi") -> pd.DataFrame:
    """One row per (method, cr, bits). Each method is fit once at full rank, then truncated."""
    for m in methods:
        if m not in REDUCER_REGISTRY:
            raise ArgumentError(f"unknown reduction method {m!r}")
    rows: List[Dict[str, Any]] = []
    t0 = time.perf_counter()
    full = _stage("reduce", mpca.fit, dataset.tensors, dataset.dims, workers=workers, solver=solver)
    mpca_ms = _ms(t0)
    flat = vectorize_batch(dataset.tensors) if "pca" in methods else None
    pca_full = None
    pca_ms = 0
    if flat is not None:
        t0 = time.perf_counter()
        pca_full = _stage("reduce", fit_pca, flat, out_dim=flat.shape[1], solver=solver)
        pca_ms = _ms(t0)

    for cr in crs:
        model = full.with_out_dims(mpca.select_dims_by_cr(dataset.dims, cr))
        ccrs = mpca.mode_ccrs(model)
        ccr_w = mpca.weighted_ccr(ccrs, dataset.dims)
        reduced: Dict[str, Tuple[np.ndarray, str, float]] = {}
        if "mpca" in methods:
            reduced["mpca"] = (vectorize_batch(mpca.project_batch(model, dataset.tensors)),
                               ",".join(map(str, model.out_dims)), ccr_w)
        if pca_full is not None:
            k = mpca.select_dim_for_ccr(pca_full.spectrum, min(1.0, ccr_w))
            pm = replace(pca_full, out_dim=k, components=pca_full.components[:, :k])
            reduced["pca"] = (project_pca(pm, flat), str(k), pm.ccr)
        for method in methods:
            vecs, dims_s, rate = reduced[method]
            for b in bits:
                t1 = time.perf_counter()
                codes = _stage("hash", lambda: encode_batch(fit_hash(vecs.shape[1], b, seed), vecs))
                cfg = PipelineConfig(method=method, cr=cr, bits=b, seed=seed, topk=topk)
                result = _evaluate(dataset, codes, cfg)
                rows.append({"method": method, "cr": float(cr), "bits": int(b), "dims": dims_s,
                             "ccr_w": float(rate), "map": result.map,
                             "fit_ms": mpca_ms if method == "mpca" else pca_ms,
                             "query_ms": _ms(t1)})
                logger.info("[sweep] method=%s cr=%.3f bits=%d dims=%s map=%.4f",
                            method, cr, b, dims_s, result.map)
    return pd.DataFrame(rows, columns=["method", "cr", "bits", "dims", "ccr_w", "map", "fit_ms", "query_ms"])
