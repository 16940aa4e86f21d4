"""Platform-independent seeded randomness.

Dataset splits and class balancing draw from :class:`SplitMix64` so that the
same seed selects the same images on every machine and numpy version. Bulk
numeric randomness (weight init, noise, affine parameters) uses numpy's
``default_rng``, seeded from :func:`derive_seed`.
"""
from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1


class SplitMix64:
    """Steele/Lea/Flood SplitMix64 generator (64-bit state, 64-bit output)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts, e.g. (seed, id, copy)."""
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(text, digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1
