"""Counter-based reproducible random streams.

Every sampler in the package takes an explicit RngStream; a fixed
(seed, stream) pair reproduces byte-identical outputs.  Streams for
pipeline stages are derived by splitting on string labels, so adding a
stage never perturbs the draws of another.
"""

import zlib

import numpy as np


class RngStream:
    """A Philox-backed generator addressed by (seed, stream)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def split(self, label: str) -> "RngStream":
        """Child stream keyed by a stable hash of `label`."""
        child = (self.stream * 0x9E3779B97F4A7C15 + zlib.crc32(label.encode())) & 0xFFFFFFFFFFFFFFFF
        return RngStream(self.seed, child ^ 0x5DEECE66D)

    # Convenience pass-throughs used throughout the samplers.
    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def sample_distinct(rng: RngStream, n: int, k: int) -> np.ndarray:
    """k distinct uniform indices from range(n), without materializing range(n).

    Rejection against a hash set; efficient when k << n.  Falls back to a
    permutation draw when k is a large fraction of n.
    """
    if k < 0 or k > n:
        raise ValueError("sample_distinct: k out of range")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k > n // 2 and n <= 1 << 24:
        return rng.generator.permutation(n)[:k].astype(np.int64)
    chosen: set = set()
    out = np.empty(k, dtype=np.int64)
    filled = 0
    while filled < k:
        need = k - filled
        draw = rng.integers(0, n, size=max(need + 16, int(1.1 * need)))
        for v in draw:
            iv = int(v)
            if iv not in chosen:
                chosen.add(iv)
                out[filled] = iv
                filled += 1
                if filled == k:
                    break
    return out
