"""Deterministic pseudo-randomness built on SplitMix64.

Every random choice in the simulator flows through this module so that a run
is reproducible from its 64-bit seed alone.  SplitMix64 is used because its
constants are public and fixed (Steele, Lea & Flood's generator, as shipped
in `java.util.SplittableRandom`), it is a pure function of a counter, and it
vectorizes: replays do not depend on any library's private RNG state layout.

Stream derivation: `substream(seed, *tags)` hashes the tags into the seed one
at a time, so (seed, processor id, purpose) pairs give independent streams.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a fixed bijective hash on 64-bit integers."""
    z = (x + _GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def substream(seed: int, *tags: int) -> int:
    """Derive an independent stream seed from (seed, tags...)."""
    s = seed & MASK64
    for tag in tags:
        s = mix64(s ^ (tag & MASK64))
    return s


def stream_u64(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Values mix64(seed + (offset+1..offset+n) * GAMMA) as a uint64 array."""
    idx = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


class SplitMix64:
    """Sequential counter-based stream with convenience draws."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.seed + self.counter * _GAMMA) & MASK64)

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection from the top of 2^64."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = MASK64 - (MASK64 + 1) % n
        while True:
            v = self.next_u64()
            if v <= limit:
                return v % n

    def random(self) -> float:
        return self.next_u64() / 2.0**64

    def shuffle(self, items: list) -> None:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_mask(self, n: int) -> np.ndarray:
        """Boolean mask of n independent fair coin flips."""
        bits = stream_u64(self.seed, (n + 63) // 64, offset=self.counter)
        self.counter += (n + 63) // 64
        unpacked = np.unpackbits(bits.view(np.uint8))
        return unpacked[:n].astype(bool)


def key_order_permutation(seed: int, n: int) -> np.ndarray:
    """Permutation of 1..n: ranks of the keys mix64(seed + i*GAMMA).

    Sorting n i.i.d. uniform 64-bit keys yields a uniformly random
    permutation (up to astronomically rare ties, which the stable sort
    breaks deterministically).  Element i of the result is the 1-based
    position whose key is the i-th smallest, i.e. the image list of the
    permutation in one-line notation.
    """
    keys = stream_u64(seed, n)
    return (np.argsort(keys, kind="stable") + 1).astype(np.int64)
