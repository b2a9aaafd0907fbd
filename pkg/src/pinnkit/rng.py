"""Deterministic 64-bit PRNG with named derived streams.

SplitMix64 is the base generator: tiny state, full 64-bit output, and easy
to reproduce in any language. Independent streams for different purposes
(data noise, weight init, sweep cells) are derived by hashing tag strings
and integers into a fresh seed, so no two purposes ever share a sequence.
Gaussians come from the basic Box-Muller transform.
"""

import math

_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix64_step(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return state, z


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


def derive_seed(base: int, *tags) -> int:
    """Mix a base seed with tags (strings or ints) into a new 64-bit seed.

    Stable across processes and platforms (no reliance on Python's
    randomized str hash).
    """
    h = base & _MASK
    for tag in tags:
        if isinstance(tag, str):
            t = _fnv1a64(tag.encode("utf-8"))
        else:
            t = int(tag) & _MASK
        h ^= t
        _, h = _splitmix64_step(h)
    return h


class Rng:
    """SplitMix64 stream with uniform and Box-Muller normal draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._spare: float | None = None

    def next_u64(self) -> int:
        self._state, z = _splitmix64_step(self._state)
        return z

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + self.uniform() * (hi - lo)

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return mean + std * z
        # Box-Muller; u1 nudged away from 0 so log stays finite
        u1 = self.uniform()
        u2 = self.uniform()
        if u1 < 1e-300:
            u1 = 1e-300
        radius = math.sqrt(-2.0 * math.log(u1))
        z0 = radius * math.cos(2.0 * math.pi * u2)
        z1 = radius * math.sin(2.0 * math.pi * u2)
        self._spare = z1
        return mean + std * z0

    def split(self, *tags) -> "Rng":
        """Child stream seeded from the current seed state and tags."""
        return Rng(derive_seed(self._state, "split", *tags))
