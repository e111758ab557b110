# src/mpca_retrieval/hashing/rng.py
# Reproducible generator shared by hyperplane sampling and synthetic data.
#
# Contract (any port must reproduce it bit for bit):
#   state      : s0..s3 = four successive splitmix64 outputs starting from the seed
#   word       : xoshiro256++  (rotl(s0 + s3, 23) + s0)
#   uniforms   : u = (w >> 11) * 2**-53, in [0, 1)
#   normals(n) : ceil(n/2) Box-Muller pairs. Each pair consumes two words a, b in order:
#                u1 = 1 - uniform(a) (in (0, 1]), u2 = uniform(b),
#                r = sqrt(-2 ln u1), emit r*cos(2 pi u2) then r*sin(2 pi u2).
#                An odd n drops the last sine; every call starts a fresh pair.
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from mpca_retrieval.errors import ArgumentError

MASK64 = (1 << 64) - 1
_TWO_NEG_53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> Tuple[int, int]:
    """One splitmix64 step: (new state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


class Xoshiro256pp:
    def __init__(self, seed: int) -> None:
        seed = int(seed)
        if not 0 <= seed <= MASK64:
            raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        x = seed
        state: List[int] = []
        for _ in range(4):
            x, out = splitmix64(x)
            state.append(out)
        self._s = state

    @property
    def state(self) -> Tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def words(self, count: int) -> List[int]:
        s0, s1, s2, s3 = self._s
        mask = MASK64
        out = [0] * count
        for i in range(count):
            r = (s0 + s3) & mask
            out[i] = (((r << 23) | (r >> 41)) + s0) & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & mask
        self._s = [s0, s1, s2, s3]
        return out

    def uniforms(self, count: int) -> np.ndarray:
        w = np.array(self.words(count), dtype=np.uint64)
        return (w >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def normals(self, count: int) -> np.ndarray:
        count = int(count)
        if count <= 0:
            return np.zeros(0, dtype=np.float64)
        pairs = (count + 1) // 2
        w = np.array(self.words(2 * pairs), dtype=np.uint64).reshape(pairs, 2)
        u1 = 1.0 - (w[:, 0] >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        u2 = (w[:, 1] >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        r = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty((pairs, 2), dtype=np.float64)
        z[:, 0] = r * np.cos(angle)
        z[:, 1] = r * np.sin(angle)
        return z.reshape(-1)[:count]

    def standard_normal(self, shape: Sequence[int]) -> np.ndarray:
        """Row-major fill of `shape` from one `normals` call."""
        shape = tuple(int(s) for s in shape)
        return self.normals(int(np.prod(shape))).reshape(shape)
