from __future__ import annotations
from typing import Any, Dict
from mpca_retrieval.errors import ArgumentError
from mpca_retrieval.ml.mpca import MpcaReducer
from mpca_retrieval.ml.pca_baseline import PcaReducer
REDUCER_REGISTRY: Dict[str, Any] = {"mpca": MpcaReducer, "pca": PcaReducer}
def make_reducer(name: str, **params: Any):
    name = (name or "mpca").lower()
    cls = REDUCER_REGISTRY.get(name)
    if cls is None:
        raise ArgumentError(f"unknown reduction method {name!r}; choose from {sorted(REDUCER_REGISTRY)}")
    return cls(**params)
