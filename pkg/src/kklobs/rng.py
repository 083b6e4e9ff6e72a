"""Seeded random numbers for the benchmark scenarios.

Implements the xoshiro256++ generator (Blackman & Vigna reference algorithm)
with splitmix64 state seeding, so draws are bit-reproducible across platforms
and independent of any numpy RNG version.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class SplitMix64:
    """64-bit state expander used to seed the main generator."""

    def __init__(self, seed: int):
        self._x = seed & _MASK64

    def next(self) -> int:
        self._x = (self._x + 0x9E3779B97F4A7C15) & _MASK64
        z = self._x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


class Xoshiro256PlusPlus:
    """xoshiro256++ PRNG; 64-bit outputs, 256-bit state."""

    def __init__(self, seed: int):
        sm = SplitMix64(int(seed))
        self._s = [sm.next() for _ in range(4)]

    def next_raw(self) -> int:
        s = self._s
        result = (_rotl((s[0] + s[3]) & _MASK64, 23) + s[0]) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53-bit resolution."""
        return (self.next_raw() >> 11) * 2.0**-53

    def uniforms(self, size: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(size)], dtype=float)

    def normal_pair(self) -> tuple[float, float]:
        """Box-Muller pair of standard normals."""
        u1 = ((self.next_raw() >> 11) + 1) * 2.0**-53  # (0, 1], log-safe
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)

    def normals(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=float)
        for i in range(0, size - 1, 2):
            out[i], out[i + 1] = self.normal_pair()
        if size % 2:
            out[-1] = self.normal_pair()[0]
        return out

    def unit_vector(self, dim: int) -> np.ndarray:
        """Uniform direction via Gaussian draw then normalization."""
        while True:
            v = self.normals(dim)
            norm = float(np.linalg.norm(v))
            if norm > 1e-12:
                return v / norm

    def uniform_box(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return lo + self.uniforms(lo.size) * (hi - lo)
