"""Portable random stream.

Wraps the PCG64 bit generator (O'Neill's PCG-XSL-RR 128/64) and derives
uniform and normal variates from its raw 64-bit output with fixed, documented
transforms, so streams are reproducible outside numpy as well:

* uniform: ``(raw >> 11) * 2**-53`` in [0, 1)
* normal: Box-Muller on two uniforms, ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``
"""
from __future__ import annotations

import numpy as np


class Stream:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bitgen = np.random.PCG64(self.seed)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n).astype(np.uint64)

    def uniform(self, n: int | tuple = 1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (n,) if isinstance(n, int) else tuple(n)
        count = int(np.prod(shape))
        u = (self.raw(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, n: int | tuple = 1, sigma: float = 1.0) -> np.ndarray:
        shape = (n,) if isinstance(n, int) else tuple(n)
        count = int(np.prod(shape))
        u1 = self.uniform(count)
        u2 = self.uniform(count)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return (sigma * z).reshape(shape)

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """Integers in [low, high) by floor of a scaled uniform."""
        span = high - low
        return low + np.minimum((self.uniform(n) * span).astype(np.int64), span - 1)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by the stream
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = int(self.integers(0, i + 1)[0])
            idx[i], idx[j] = idx[j], idx[i]
        return idx
