"""Deterministic pseudo-random numbers: splitmix64 seeding and xoshiro256** streams.

Everything stochastic in the package draws from :class:`Xoshiro256` so that
results are bit-identical across platforms and numpy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

from otcalib.special import norm_ppf

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    return state, _mix64(state)


def string_hash64(text: str) -> int:
    """First 8 bytes (little-endian) of the SHA-256 digest of ``text``."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def derive_seed(*parts: int | str) -> int:
    """Fold integers and strings into one 64-bit seed.

    Used for per-question and per-trial streams, so that results do not
    depend on the order in which work is scheduled.
    """
    h = 0
    for part in parts:
        word = string_hash64(part) if isinstance(part, str) else int(part) & MASK64
        h = _mix64((h ^ word) + GOLDEN_GAMMA & MASK64)
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 seeded through splitmix64."""

    def __init__(self, seed: int = 0):
        seed &= MASK64
        self.seed = seed
        state = seed
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self.s = s

    def getstate(self) -> tuple[int, int, int, int]:
        return tuple(self.s)

    def setstate(self, state) -> None:
        self.s = [int(v) & MASK64 for v in state]

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def random_open(self) -> float:
        """Uniform double in the open interval (0, 1)."""
        return ((self.next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def normal(self) -> float:
        return norm_ppf(self.random_open())

    def random_array(self, n: int) -> np.ndarray:
        return np.array([self.random() for _ in range(n)], dtype=np.float64)

    def normal_array(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle (descending swap positions)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
