"""Seeded random numbers that stay identical across numpy releases.

Raw 64-bit words come from the Philox-4x64 counter-based generator keyed
by the seed (a fixed published algorithm, so its stream is stable). The
conversions from words to floats are done here rather than through
``Generator`` methods, whose algorithms numpy may change:

* uniform on [0, 1): top 53 bits times ``2**-53``
* standard normal: Box-Muller on pairs of uniforms, both outputs used
* integers in [0, m): ``floor(u * m)``; the bias is below ``m * 2**-53``
"""

from __future__ import annotations

import numpy as np

__all__ = ["Stream"]

_TWO53 = 2.0**-53


class Stream:
    """Deterministic draws keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._bits = np.random.Philox(key=seed)

    def raw(self, size: int) -> np.ndarray:
        return self._bits.random_raw(size).astype(np.uint64)

    def uniform(self, size: int) -> np.ndarray:
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * _TWO53

    def normal(self, size: int) -> np.ndarray:
        m = (size + 1) // 2
        u = self.uniform(2 * m)
        # 1 - u lies in (0, 1], so the log is finite
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        theta = 2.0 * np.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:size]

    def integers(self, m: int, size: int) -> np.ndarray:
        return np.floor(self.uniform(size) * m).astype(np.int64)
