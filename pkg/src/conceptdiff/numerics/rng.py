"""Counter-based pseudo-random streams with explicit, serializable state.

Each draw hashes (base, counter) through the splitmix64 finalizer, so a
stream is fully determined by (seed, stream id, counter).  Replaying a
stream from the same state is bitwise reproducible on any platform, and
distinct stream ids give statistically independent sequences without any
coordination between them.
"""

from __future__ import annotations

import math

import numpy as np

_PHI = np.uint64(0x9E3779B97F4A7C15)  # 2^64 / golden ratio
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = float(1 << 53)


def _finalize(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2^64 by design
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _S30)) * _MIX1
        x = (x ^ (x >> _S27)) * _MIX2
        return x ^ (x >> _S31)


class RngStream:
    """Deterministic random stream addressed by (seed, stream, counter)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        with np.errstate(over="ignore"):
            self._base = _finalize(
                np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _PHI
                + np.uint64(stream & 0xFFFFFFFFFFFFFFFF) * _MIX1
            )
        self.counter = 0

    def fork(self, label: int) -> "RngStream":
        """Child stream independent of this one and of other labels."""
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.stream = (self.stream, int(label))
        with np.errstate(over="ignore"):
            child._base = _finalize(self._base + np.uint64(int(label) + 1) * _PHI)
        child.counter = 0
        return child

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _finalize(self._base + idx * _PHI)

    # ------------------------------------------------------------------
    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._words(n) >> _S11).astype(np.float64) / _TWO53
        out = low + (high - low) * u
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller on two uniform words per pair."""
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        w = self._words(2 * pairs)
        # u1 in (0, 1] keeps the log finite
        u1 = ((w[:pairs] >> _S11).astype(np.float64) + 1.0) / _TWO53
        u2 = (w[pairs:] >> _S11).astype(np.float64) / _TWO53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def randint(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high).  Modulo bias is negligible for spans << 2^64."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        span = np.uint64(high - low)
        vals = (self._words(n) % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n) by Fisher-Yates."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def _as_shape(shape):
    if isinstance(shape, int):
        return (shape,)
    return tuple(shape)
