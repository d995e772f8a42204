"""Deterministic pseudo-randomness shared by every stochastic component.

Parameter initialization, data synthesis, shuffling, and split sampling all
draw from one documented generator so that identical seeds reproduce
bit-for-bit on any platform: a 64-bit linear congruential generator with
Knuth's MMIX constants,

    state' = state * 6364136223846793005 + 1442695040888963407   (mod 2**64)

Doubles are formed from the top 53 bits of the state. Bulk draws are
vectorized with numpy's modular uint64 arithmetic; the sequence is identical
to stepping the recurrence one draw at a time.
"""

from __future__ import annotations

import numpy as np

LCG_MULT = 6364136223846793005
LCG_INC = 1442695040888963407
_MASK64 = (1 << 64) - 1

# SplitMix64 finalizer constants, used only to derive per-component seeds.
_MIX_GAMMA = 0x9E3779B97F4A7C15
_MIX_M1 = 0xBF58476D1CE4E5B9
_MIX_M2 = 0x94D049BB133111EB

# FNV-1a 64-bit, used to hash component tags into the seed derivation.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(x: int) -> int:
    x = (x + _MIX_GAMMA) & _MASK64
    x ^= x >> 30
    x = (x * _MIX_M1) & _MASK64
    x ^= x >> 27
    x = (x * _MIX_M2) & _MASK64
    x ^= x >> 31
    return x


def _fnv1a(tag: str) -> int:
    h = _FNV_OFFSET
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(master: int, tag: str) -> int:
    """Stable per-component seed so components draw from independent streams.

    Initializing e.g. the mapper from ``derive_seed(seed, "mapper")`` keeps its
    parameters identical no matter which other components exist or in which
    order they were built.
    """
    return _splitmix64((master & _MASK64) ^ _fnv1a(tag))


class Lcg64:
    """The package-wide deterministic generator."""

    def __init__(self, seed: int):
        self.state = _splitmix64(seed & _MASK64)

    def _raw(self, n: int) -> np.ndarray:
        """Advance n steps, returning the n intermediate states as uint64."""
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        a = np.uint64(LCG_MULT)
        # powers[i] = a**(i+1); geo[i] = 1 + a + ... + a**i   (all mod 2**64)
        powers = np.cumprod(np.full(n, a, dtype=np.uint64))
        geo = np.empty(n, dtype=np.uint64)
        geo[0] = 1
        if n > 1:
            np.cumsum(powers[:-1], out=geo[1:])
            geo[1:] += np.uint64(1)
        states = powers * np.uint64(self.state) + np.uint64(LCG_INC) * geo
        self.state = int(states[-1])
        return states

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray | float:
        """Uniform doubles in [low, high) from the top 53 bits of each state."""
        scalar = shape is None
        if scalar:
            shape = 1
        n = int(np.prod(shape))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + (high - low) * u
        if scalar:
            return float(out[0])
        return out.reshape(shape)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound), by scaling uniform doubles."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        u = self.uniform(n) if n != 1 else np.array([self.uniform()])
        return np.minimum((u * bound).astype(np.int64), bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via argsort of fresh uniforms."""
        return np.argsort(self.uniform(n), kind="stable")

    def shuffle(self, items: list) -> list:
        """Return items reordered by a fresh permutation (input untouched)."""
        return [items[i] for i in self.permutation(len(items))]
