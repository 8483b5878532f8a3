"""Per-sample random streams.

Every sample draws from its own Philox-4x64-10 counter-based stream whose
128-bit key is the first 16 bytes of ``SHA-256(f"{seed}:{sample_id}")``
(two little-endian u64 words), counter starting at zero.  Derived variates use
only the raw 64-bit outputs, so a corpus depends on nothing but the seed, the
sample id, and the conversions below:

* uniform in [0, 1): ``(raw >> 11) * 2**-53``
* standard normal: Box-Muller on two uniforms, ``sqrt(-2 ln(1-u1)) * cos(2π u2)``
* integer in [0, n): ``floor(uniform * n)``
"""

from __future__ import annotations

import hashlib

import numpy as np

_INV_2_53 = 1.0 / (1 << 53)


def stream_key(seed: int, sample_id: int) -> np.ndarray:
    digest = hashlib.sha256(f"{int(seed)}:{int(sample_id)}".encode("ascii")).digest()
    return np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)


class SampleStream:
    """Deterministic variates for one (seed, sample id) pair."""

    def __init__(self, seed: int, sample_id: int):
        self._bits = np.random.Philox(key=stream_key(seed, sample_id))

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64)

    def uniform(self, n: int = 1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return low + (high - low) * u

    def normal(self, n: int = 1) -> np.ndarray:
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, n_values: int, n: int = 1) -> np.ndarray:
        return np.minimum((self.uniform(n) * n_values).astype(np.int64), n_values - 1)
