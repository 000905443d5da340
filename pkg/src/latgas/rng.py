"""Reproducible randomness for parallel replicas.

All randomness in the package flows through :class:`SeedStream`, a thin
wrapper around numpy's Philox counter-based generator.  Philox-4x64 is keyed
with the pair ``(master_seed, stream_id)``, so replica ``i`` of a run simply
uses stream ``i`` of the same master seed: streams are statistically
independent and any replica can be regenerated in isolation.

Uniform variates are drawn in blocks to amortize the generator call overhead;
the event loops consume them one at a time through :meth:`SeedStream.uniform`.
"""

from __future__ import annotations

import math

import numpy as np

_BLOCK = 1 << 14


class SeedStream:
    """One reproducible stream of variates out of a 64-bit master seed.

    Parameters
    ----------
    master_seed : int
        64-bit master seed of the whole experiment.
    stream : int
        Stream index (replica number).  Distinct streams are independent.
    """

    def __init__(self, master_seed: int, stream: int = 0):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        bitgen = np.random.Philox(key=(self.master_seed << 64) | (self.stream & 0xFFFFFFFFFFFFFFFF))
        self._gen = np.random.Generator(bitgen)
        self._buf = self._gen.random(_BLOCK)
        self._pos = 0

    def spawn(self, stream: int) -> "SeedStream":
        """Stream ``stream`` of the same master seed."""
        return SeedStream(self.master_seed, stream)

    def uniform(self) -> float:
        """Next uniform variate in [0, 1)."""
        if self._pos == len(self._buf):
            self._buf = self._gen.random(_BLOCK)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def exponential(self) -> float:
        """Standard exponential variate, strictly positive."""
        u = self.uniform()
        while u == 0.0:
            u = self.uniform()
        return -math.log(u)

    def randint(self, n: int) -> int:
        """Uniform integer in {0, ..., n-1}."""
        return min(int(self.uniform() * n), n - 1)

    def choice_cumulative(self, cumw, total: float) -> int:
        """Index sampled proportionally to weights with cumulative sums ``cumw``."""
        u = self.uniform() * total
        lo, hi = 0, len(cumw) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if u < cumw[mid]:
                hi = mid
            else:
                lo = mid + 1
        return lo
