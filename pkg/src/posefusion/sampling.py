"""Counter-based uniform random numbers.

Every draw is a pure hash of ``(seed, pixel, sample, dimension)``, so the value a
path sees does not depend on execution order or thread count. The compiled kernel
implements the same hash bit for bit.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# dimension layout per camera sample
DIM_JITTER = 0
DIMS_PER_BOUNCE = 5
DIM_BOUNCE0 = 2


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def hash_uniform(seed: int, pixel: int, sample: int, dim: int) -> float:
    h = mix64(seed ^ GOLDEN)
    h = mix64(h ^ pixel)
    h = mix64(h ^ ((sample << 8) | dim))
    return (h >> 11) * (1.0 / 9007199254740992.0)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class CounterSampler:
    """Vectorised view of :func:`hash_uniform` for a batch of (pixel, sample) pairs."""

    def __init__(self, seed: int, pixel: np.ndarray, sample: np.ndarray):
        with np.errstate(over="ignore"):
            base = np.uint64(mix64(int(seed) ^ GOLDEN))
            self._h = _mix64_np(base ^ np.asarray(pixel, dtype=np.uint64))
        self._sample = np.asarray(sample, dtype=np.uint64) << np.uint64(8)

    def uniform(self, dim: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            h = _mix64_np(self._h ^ (self._sample | np.uint64(dim)))
        return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
