# src/mpca_retrieval/hashing/lsh.py
# Sign-of-random-hyperplane LSH: bit b = 1 iff <w_b, v> >= 0.
# Codes are packed LSB-first into uint64 words: bit b -> word b // 64, position b % 64.
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from mpca_retrieval.errors import ArgumentError, ShapeError
from mpca_retrieval.hashing.rng import MASK64, Xoshiro256pp

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


def n_words(bits: int) -> int:
    return (int(bits) + 63) // 64


@dataclass(frozen=True, eq=False)
class HashModel:
    dim: int
    bits: int
    seed: int
    hyperplanes: np.ndarray  # bits x dim, float64

    @property
    def checksum(self) -> int:
        return hyperplane_checksum(self.hyperplanes)


@dataclass(frozen=True, eq=False)
class BinaryCode:
    bits: int
    words: np.ndarray  # uint64, ceil(bits / 64)

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.words, dtype=np.uint64).reshape(-1)
        if w.shape[0] != n_words(self.bits):
            raise ShapeError(f"{self.bits}-bit code needs {n_words(self.bits)} words, got {w.shape[0]}")
        tail = self.bits % 64
        if tail and int(w[-1]) >> tail:
            raise ArgumentError(f"{self.bits}-bit code has bits set above position {self.bits - 1}")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    @classmethod
    def from_int(cls, value: int, bits: int) -> "BinaryCode":
        value = int(value)
        if value < 0 or value >> bits:
            raise ArgumentError(f"value {value} does not fit in {bits} bits")
        words = [(value >> (64 * i)) & MASK64 for i in range(n_words(bits))]
        return cls(bits, np.array(words, dtype=np.uint64))

    def to_int(self) -> int:
        return sum(int(w) << (64 * i) for i, w in enumerate(self.words))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryCode):
            return NotImplemented
        return self.bits == other.bits and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.bits, self.words.tobytes()))


def hyperplane_checksum(hyperplanes: np.ndarray) -> int:
    """64-bit BLAKE2b digest of the float64 little-endian hyperplane bytes."""
    raw = np.ascontiguousarray(hyperplanes, dtype="<f8").tobytes()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def fit_hash(dim: int, bits: int, seed: int) -> HashModel:
    """Hyperplanes are `bits` x `dim` standard normals, drawn row-major from the seeded generator."""
    dim, bits = int(dim), int(bits)
    if dim < 1 or bits < 1:
        raise ArgumentError(f"dim and bits must be >= 1, got dim={dim} bits={bits}")
    planes = Xoshiro256pp(seed).standard_normal((bits, dim))
    planes.setflags(write=False)
    return HashModel(dim=dim, bits=bits, seed=int(seed), hyperplanes=planes)


def pack_bits(flags: np.ndarray) -> np.ndarray:
    """(N, bits) booleans -> (N, W) uint64, LSB-first, unused high bits zero."""
    flags = np.asarray(flags, dtype=bool)
    n, bits = flags.shape
    width = n_words(bits) * 64
    padded = np.zeros((n, width), dtype=bool)
    padded[:, :bits] = flags
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64).reshape(n, -1)


def unpack_bits(words: np.ndarray, bits: int) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :bits].astype(bool)


def encode_batch(model: HashModel, vectors: np.ndarray) -> np.ndarray:
    """Encode an (N, dim) array; returns (N, W) packed words."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != model.dim:
        raise ShapeError(f"expected (N, {model.dim}) vectors, got shape {v.shape}")
    if np.isnan(v).any():
        raise ArgumentError("cannot hash vectors containing NaN")
    return pack_bits(v @ model.hyperplanes.T >= 0.0)


def encode(model: HashModel, v: np.ndarray) -> BinaryCode:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a single vector, got shape {v.shape}")
    return BinaryCode(model.bits, encode_batch(model, v[np.newaxis])[0])


def popcount64(words: np.ndarray) -> np.ndarray:
    """SWAR population count per uint64 word."""
    x = np.asarray(words, dtype=np.uint64)
    x = x - ((x >> np.uint64(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return (x * _H01) >> np.uint64(56)


def hamming(a: BinaryCode, b: BinaryCode) -> int:
    if a.bits != b.bits:
        raise ShapeError(f"cannot compare a {a.bits}-bit code with a {b.bits}-bit code")
    return int(popcount64(np.bitwise_xor(a.words, b.words)).sum())


def hamming_many(words: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Distances from one packed query (W,) to every row of an (N, W) code matrix."""
    words = np.asarray(words, dtype=np.uint64)
    query = np.asarray(query, dtype=np.uint64).reshape(-1)
    if words.ndim != 2 or words.shape[1] != query.shape[0]:
        raise ShapeError(f"code width {query.shape[0]} does not match index width {words.shape[-1]}")
    return popcount64(np.bitwise_xor(words, query)).sum(axis=1, dtype=np.int64)


class LshEncoder(BaseEstimator, TransformerMixin):
    """Fits a HashModel to the input width; transform returns packed (N, W) codes."""

    def __init__(self, bits: int = 128, seed: int = 0) -> None:
        self.bits = bits
        self.seed = seed

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ShapeError(f"expected (N, D) vectors, got shape {X.shape}")
        self.model_ = fit_hash(X.shape[1], self.bits, self.seed)
        return self

    def transform(self, X):
        return encode_batch(self.model_, X)
