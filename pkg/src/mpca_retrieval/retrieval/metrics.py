# src/mpca_retrieval/retrieval/metrics.py
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from mpca_retrieval.errors import ArgumentError, NoRelevantItemsWarning, ShapeError
from mpca_retrieval.hashing.lsh import BinaryCode
from mpca_retrieval.retrieval.index import RetrievalIndex, rank_words

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MapResult:
    map: float
    n_queries: int
    n_without_relevant: int
    aps: np.ndarray


def _ap(flags: np.ndarray, k: Optional[int]) -> Tuple[float, bool]:
    if k is not None:
        flags = flags[:k]
    rel = flags.astype(bool)
    n_rel = int(rel.sum())
    if n_rel == 0:
        return 0.0, False
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.shape[0] + 1)
    return float(np.sum(hits[rel] / ranks[rel]) / n_rel), True


def average_precision(ranking: Sequence[int], k: Optional[int] = None) -> float:
    """Mean of precision@p over the positions p holding a relevant item.

    With k, only the first k ranks count and the mean is over relevant items found there.
    No relevant item gives 0.0 and a NoRelevantItemsWarning.
    """
    flags = np.asarray(ranking).reshape(-1)
    ap, found = _ap(flags, k)
    if not found:
        warnings.warn("ranking has no relevant item; average precision set to 0",
                      NoRelevantItemsWarning, stacklevel=2)
    return ap


def evaluate_map(index: RetrievalIndex, q_ids: np.ndarray, q_labels: np.ndarray,
                 q_words: np.ndarray, topk: Optional[int] = None, shards: int = 1,
                 bits: Optional[int] = None) -> MapResult:
    """MAP with every query ranked against the full index, its own id excluded.

    `bits`, when given, is the query code length and must equal the index code length.
    """
    q_ids = np.asarray(q_ids, dtype=np.uint64).reshape(-1)
    q_labels = np.asarray(q_labels, dtype=np.uint32).reshape(-1)
    q_words = np.atleast_2d(np.asarray(q_words, dtype=np.uint64))
    if q_ids.shape[0] == 0:
        raise ArgumentError("query set is empty")
    if bits is not None and int(bits) != index.bits:
        raise ShapeError(f"query codes have {bits} bits, index has {index.bits}")
    if q_words.shape[1] != index.words.shape[1]:
        raise ShapeError(f"query codes have {q_words.shape[1]} words, index has {index.words.shape[1]}")
    aps = np.zeros(q_ids.shape[0], dtype=np.float64)
    missing = 0
    for i in range(q_ids.shape[0]):
        pos, _ = rank_words(index, q_words[i], shards=shards)
        pos = pos[index.ids[pos] != q_ids[i]]
        ap, found = _ap(index.labels[pos] == q_labels[i], topk)
        aps[i] = ap
        missing += 0 if found else 1
    if missing:
        logger.warning("[map] %d of %d queries had no relevant item; counted as AP=0", missing, len(aps))
    return MapResult(map=float(aps.mean()), n_queries=int(aps.shape[0]),
                     n_without_relevant=missing, aps=aps)


def mean_average_precision(index: RetrievalIndex, queries: Iterable[Tuple[int, int, BinaryCode]],
                           topk: Optional[int] = None, shards: int = 1) -> float:
    queries = list(queries)
    if not queries:
        raise ArgumentError("query set is empty")
    for qid, _, code in queries:
        if code.bits != index.bits:
            raise ShapeError(f"query {qid} has a {code.bits}-bit code, index has {index.bits}")
    return evaluate_map(
        index,
        np.array([int(q) for q, _, _ in queries], dtype=np.uint64),
        np.array([int(lb) for _, lb, _ in queries], dtype=np.uint32),
        np.stack([c.words for _, _, c in queries]),
        topk=topk, shards=shards, bits=index.bits,
    ).map
