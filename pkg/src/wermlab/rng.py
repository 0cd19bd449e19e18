"""Deterministic random streams.

Every random draw in the package goes through :class:`Stream`, a
lane-parallel xoshiro256** generator.  A stream owns ``LANES`` independent
xoshiro256** states, each seeded by splitmix64 from ``(seed, lane)``.  One
"step" advances all lanes at once and yields ``LANES`` 64-bit words; a
request for ``n`` words takes the first ``n`` words of the concatenated
steps, and any unused words of the last step are kept for the next request.
Since the word sequence depends only on the seed, the output is identical
across runs and platforms that share IEEE-754 doubles.

Doubles use the top 53 bits (``(w >> 11) * 2**-53``); Gaussians use the
Box-Muller transform on pairs of doubles.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
LANES = 256

_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(base: int, *path: int) -> int:
    """Derive a child seed from ``base`` and a path of integer indices.

    Used to give every (seed, cell) pair of an experiment its own stream.
    """
    s = base & MASK64
    for p in path:
        _, s = splitmix64(s ^ ((p * _GOLDEN) & MASK64))
    return s


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Stream:
    """Seeded source of uniform words, doubles and Gaussians."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = seed & MASK64
        state = np.empty((4, LANES), dtype=np.uint64)
        sm = self.seed
        for lane in range(LANES):
            for k in range(4):
                sm, out = splitmix64(sm)
                state[k, lane] = out
        # xoshiro must not start from the all-zero state
        state[0, (state == 0).all(axis=0)] = 1
        self._s = state
        self._buf = np.empty(0, dtype=np.uint64)

    def _step(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _rotl(s3, 45)
        return out

    def words(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words."""
        if n < 0:
            raise ValueError("n must be non-negative")
        parts = [self._buf]
        have = self._buf.size
        while have < n:
            w = self._step()
            parts.append(w)
            have += w.size
        allw = np.concatenate(parts) if len(parts) > 1 else self._buf
        out, self._buf = allw[:n].copy(), allw[n:].copy()
        return out

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1)."""
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normal draws via Box-Muller."""
        m = (n + 1) // 2
        u = self.random(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], keeps log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n]

    def integers(self, k: int, n: int) -> np.ndarray:
        """``n`` integers uniform on {0, ..., k-1}."""
        if k < 1:
            raise ValueError("k must be positive")
        return np.minimum((self.random(n) * k).astype(np.int64), k - 1)

    def categorical(self, probs, n: int) -> np.ndarray:
        """``n`` indices drawn from the discrete law ``probs``."""
        cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
        idx = np.searchsorted(cdf / cdf[-1], self.random(n), side="right")
        return np.minimum(idx, len(cdf) - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.words(n), kind="stable")
