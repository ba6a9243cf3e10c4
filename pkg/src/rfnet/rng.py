"""Counter-based pseudo-random stream used everywhere randomness is needed.

The generator is splitmix64 run in counter mode: output ``i`` of stream
``seed`` is ``mix64(seed + (i + 1) * GOLDEN)`` with the standard constants

    GOLDEN = 0x9E3779B97F4A7C15
    mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
              z ^= z >> 27; z *= 0x94D049BB133111EB;
              z ^= z >> 31

All arithmetic is modulo 2**64. Because every output depends only on
(seed, counter), draws vectorize cleanly and the stream is reproducible
bit-for-bit from any implementation of the constants above.
"""
from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = float(1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Prng:
    """Deterministic stream of uniforms/normals for a given 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def spawn(self, tag: int) -> "Prng":
        """Independent child stream; used to give each consumer its own seed."""
        child_seed = _mix64(self.seed + np.uint64(tag + 1) * GOLDEN)
        return Prng(int(child_seed))

    def next_u64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
            out = _mix64(self.seed + idx * GOLDEN)
        self._counter += n
        return out

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) using the top 53 bits of each word."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) / _U53

    def uniform_shaped(self, shape, low=0.0, high=1.0) -> np.ndarray:
        size = int(np.prod(shape)) if shape else 1
        u = self.uniform(size) * (high - low) + low
        return u.reshape(shape)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) by modulo (bias negligible for small bound)."""
        return (self.next_u64(n) % np.uint64(bound)).astype(np.int64)

    def normal(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller on consecutive uniform pairs."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        u1 = np.maximum(u1, 1e-300)  # avoid log(0)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return out[:n]

    def shuffled_indices(self, n: int) -> np.ndarray:
        """Permutation of range(n) by sorting one block of draws (stable keys)."""
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")
