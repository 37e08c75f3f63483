"""Portable pseudo-random generator.

Simulation outputs must be byte-identical across platforms and library
versions, so every random draw made by the environment goes through
xoshiro256** (Blackman & Vigna) seeded by splitmix64, implemented here in
pure Python.  Reference outputs are pinned in ``tests/test_rng.py``.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** generator with a few sampling helpers.

    >>> Xoshiro256.from_state([1, 2, 3, 4]).next_u64()
    11520
    """

    def __init__(self, seed: int = 0):
        sm = int(seed) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s
        self._spare = None
        self.seed = int(seed)

    @classmethod
    def from_state(cls, state) -> "Xoshiro256":
        rng = cls.__new__(cls)
        rng._s = [int(v) & MASK64 for v in state]
        if not any(rng._s):
            raise ValueError("xoshiro256 state must not be all zero")
        rng._spare = None
        rng.seed = None
        return rng

    @classmethod
    def for_stream(cls, seed: int, stream: str) -> "Xoshiro256":
        """Independent generator for a named stream under one experiment seed."""
        key = zlib.crc32(stream.encode("utf-8"))
        _, mixed = splitmix64((int(seed) & MASK64) ^ ((key * GOLDEN) & MASK64))
        return cls(mixed)

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased (Lemire's multiply-shift)."""
        if n <= 0:
            raise ValueError("n must be positive")
        m = self.next_u64() * n
        low = m & MASK64
        if low < n:
            threshold = ((1 << 64) - n) % n
            while low < threshold:
                m = self.next_u64() * n
                low = m & MASK64
        return m >> 64

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        return low + self.randbelow(high - low + 1)

    def standard_normal(self) -> float:
        # Marsaglia polar method; the second variate is cached.
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        while True:
            u = 2.0 * self.random() - 1.0
            v = 2.0 * self.random() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        f = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = v * f
        return u * f

    def normal_vector(self, d: int) -> np.ndarray:
        return np.array([self.standard_normal() for _ in range(d)])

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), via a partial Fisher-Yates shuffle."""
        if not 0 <= k <= n:
            raise ValueError("sample size out of range")
        if k == n:
            return list(range(n))
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
