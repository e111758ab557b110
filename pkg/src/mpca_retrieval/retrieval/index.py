# src/mpca_retrieval/retrieval/index.py
# Exhaustive Hamming-scan index. Entries kept sorted by id; rankings are ordered by
# (distance, id), which a stable sort on distance gives for free over id-sorted rows.
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

from mpca_retrieval.errors import ArgumentError, ShapeError
from mpca_retrieval.hashing.lsh import BinaryCode, hamming_many, n_words

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    bits: int
    ids: np.ndarray     # uint64, ascending
    labels: np.ndarray  # uint32
    words: np.ndarray   # (N, W) uint64

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def entries(self) -> Iterator[Tuple[int, int, BinaryCode]]:
        for i in range(len(self)):
            yield int(self.ids[i]), int(self.labels[i]), BinaryCode(self.bits, self.words[i])


@dataclass(frozen=True, eq=False)
class RankedResult:
    ids: np.ndarray
    labels: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __iter__(self) -> Iterator[Tuple[int, int, int]]:
        for i in range(len(self)):
            yield int(self.ids[i]), int(self.labels[i]), int(self.distances[i])


def build_index_arrays(ids: np.ndarray, labels: np.ndarray, words: np.ndarray, bits: int) -> RetrievalIndex:
    """Canonical index from columnar arrays; duplicate ids are rejected."""
    ids = np.asarray(ids, dtype=np.uint64).reshape(-1)
    labels = np.asarray(labels, dtype=np.uint32).reshape(-1)
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    if ids.shape[0] == 0:
        raise ArgumentError("cannot build an empty index")
    if labels.shape[0] != ids.shape[0] or words.shape[0] != ids.shape[0]:
        raise ShapeError(f"ids ({ids.shape[0]}), labels ({labels.shape[0]}) and codes "
                         f"({words.shape[0]}) differ in length")
    if words.shape[1] != n_words(bits):
        raise ShapeError(f"{bits}-bit codes need {n_words(bits)} words, got {words.shape[1]}")
    order = np.argsort(ids, kind="stable")
    ids, labels, words = ids[order], labels[order], words[order]
    dup = np.nonzero(ids[1:] == ids[:-1])[0]
    if dup.size:
        raise ArgumentError(f"duplicate id {int(ids[dup[0]])} in index")
    for a in (ids, labels, words):
        a.setflags(write=False)
    return RetrievalIndex(bits=int(bits), ids=ids, labels=labels, words=np.ascontiguousarray(words))


def build_index(items: Iterable[Tuple[int, int, BinaryCode]]) -> RetrievalIndex:
    items = list(items)
    if not items:
        raise ArgumentError("cannot build an empty index")
    bits = items[0][2].bits
    for item_id, _, code in items:
        if code.bits != bits:
            raise ShapeError(f"item {item_id} has a {code.bits}-bit code, expected {bits}")
    return build_index_arrays(
        np.array([int(i) for i, _, _ in items], dtype=np.uint64),
        np.array([int(lb) for _, lb, _ in items], dtype=np.uint32),
        np.stack([c.words for _, _, c in items]),
        bits,
    )


def _sort_key(dist: np.ndarray, bits: int) -> np.ndarray:
    # small unsigned keys let numpy's stable sort use radix sort
    return dist.astype(np.uint16) if bits < (1 << 16) else dist


def _rank_range(index: RetrievalIndex, query: np.ndarray, lo: int, hi: int,
                k: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    dist = hamming_many(index.words[lo:hi], query)
    order = np.argsort(_sort_key(dist, index.bits), kind="stable")
    if k is not None:
        order = order[:k]
    return order + lo, dist[order]


def rank_words(index: RetrievalIndex, query: np.ndarray, k: Optional[int] = None,
               shards: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Row positions and distances of the ranking for one packed query."""
    query = np.asarray(query, dtype=np.uint64).reshape(-1)
    if query.shape[0] != index.words.shape[1]:
        raise ShapeError(f"query has {query.shape[0]} words, index has {index.words.shape[1]}")
    if k is not None:
        k = int(k)
        if k < 1:
            raise ArgumentError(f"k must be >= 1, got {k}")
    n = len(index)
    shards = max(1, min(int(shards), n))
    if shards == 1:
        return _rank_range(index, query, 0, n, k)
    bounds = np.linspace(0, n, shards + 1).astype(int)
    with ThreadPoolExecutor(max_workers=shards) as pool:
        parts = list(pool.map(lambda b: _rank_range(index, query, b[0], b[1], k),
                              zip(bounds[:-1], bounds[1:])))
    pos = np.concatenate([p for p, _ in parts])
    dist = np.concatenate([d for _, d in parts])
    # merge by (distance, id); rows are id-sorted so row position orders ids
    order = np.lexsort((pos, dist))
    if k is not None:
        order = order[:k]
    return pos[order], dist[order]


def query(index: RetrievalIndex, code: BinaryCode, k: Optional[int] = None,
          shards: int = 1) -> RankedResult:
    """Exhaustive scan; k=None returns the full ranking."""
    if code.bits != index.bits:
        raise ShapeError(f"query code has {code.bits} bits, index has {index.bits}")
    pos, dist = rank_words(index, code.words, k=k, shards=shards)
    return RankedResult(ids=index.ids[pos], labels=index.labels[pos], distances=dist)
