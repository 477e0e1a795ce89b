"""Deterministic random streams shared by every component.

A single 64-bit seed drives a whole run.  Independent substreams are
derived by hashing the seed together with a component key, so adding or
reordering components never shifts another component's stream.  The
compiled kernels advance the exact same generator state with identical
integer arithmetic, which keeps a stream reproducible when it crosses
the Python/C boundary.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_PCG_MULT = 6364136223846793005


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective scramble of a 64-bit value."""
    x = (x + _GOLDEN) & MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of a string, used to key substreams by name."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def derive_seed(base: int, *keys: int | str) -> int:
    """Stable 64-bit seed for the substream identified by ``keys``."""
    h = mix64(base & MASK64)
    for key in keys:
        k = fnv1a64(key) if isinstance(key, str) else (key & MASK64)
        h = mix64(h ^ mix64(k))
    return h


class Pcg32:
    """PCG-XSH-RR generator: 64-bit state, odd increment, 32-bit output."""

    __slots__ = ("state", "inc")

    def __init__(self, seed: int, stream: int = 0):
        self.inc = ((mix64(stream & MASK64) << 1) | 1) & MASK64
        self.state = 0
        self.next_u32()
        self.state = (self.state + (seed & MASK64)) & MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _PCG_MULT + self.inc) & MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & 0xFFFFFFFF

    def random(self) -> float:
        """Uniform double in [0, 1) with 32-bit resolution."""
        return self.next_u32() * 2.0**-32

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via the multiply-shift bound."""
        return (self.next_u32() * n) >> 32

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def split(self, key: int | str = 0) -> "Pcg32":
        """Child generator seeded from consumed entropy; advances self."""
        hi = self.next_u32()
        lo = self.next_u32()
        seed = derive_seed((hi << 32) | lo, key)
        return Pcg32(seed, stream=derive_seed(seed, "stream"))


def spawn(base_seed: int, *keys: int | str) -> Pcg32:
    """Fresh generator for the substream named by ``keys``."""
    seed = derive_seed(base_seed, *keys)
    return Pcg32(seed, stream=derive_seed(seed, "stream"))
