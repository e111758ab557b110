# src/mpca_retrieval/utils/synthetic.py
# Clustered feature tensors standing in for exported CNN feature maps.
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from mpca_retrieval.errors import ArgumentError
from mpca_retrieval.hashing.rng import Xoshiro256pp
from mpca_retrieval.ml.tensor_ops import check_dims
from mpca_retrieval.storage.formats import FeatureDataset

logger = logging.getLogger(__name__)


def gen_synthetic(num_classes: int, per_class: int, dims: Sequence[int],
                  noise: float, seed: int) -> FeatureDataset:
    """Class c draws a standard-normal center; its items are center + noise * N(0, 1).

    Draw order from one generator: all centers (class-major, row-major tensors), then all
    noise tensors in item order. Items are class-major with ids 0..N-1.
    """
    num_classes, per_class = int(num_classes), int(per_class)
    if num_classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {num_classes}")
    if per_class < 1:
        raise ArgumentError(f"need at least 1 item per class, got {per_class}")
    noise = float(noise)
    if not noise >= 0.0:
        raise ArgumentError(f"noise must be >= 0, got {noise}")
    dims = check_dims(dims)

    rng = Xoshiro256pp(seed)
    centers = rng.standard_normal((num_classes,) + dims)
    jitter = rng.standard_normal((num_classes * per_class,) + dims)
    labels = np.repeat(np.arange(num_classes, dtype=np.uint32), per_class)
    tensors = (centers[labels] + noise * jitter).astype(np.float32)
    n = num_classes * per_class
    logger.info("[gen] classes=%d per_class=%d dims=%s noise=%g seed=%d", num_classes, per_class, dims, noise, seed)
    return FeatureDataset(dims=dims, ids=np.arange(n, dtype=np.uint64), labels=labels, tensors=tensors)
