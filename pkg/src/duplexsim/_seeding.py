"""Host-independent seed derivation and per-key uniform hashing."""
from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from an arbitrary tuple of ints/strings.

    Python's builtin ``hash`` is salted per process, so it cannot be used
    for anything that must reproduce across runs or machines.
    """
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def unit_hash(seed: int, key: int) -> float:
    """Uniform draw in [0, 1) determined only by (seed, key)."""
    return splitmix64((seed * 0x2545F4914F6CDD1D + key) & _MASK64) / 2.0**64
