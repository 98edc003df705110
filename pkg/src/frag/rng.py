"""Seed derivation and hashing primitives shared across the package."""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``data``."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given 64-bit state."""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *names: str | int) -> int:
    """Derive an independent 64-bit seed for a named stream.

    Each name is folded in as ``splitmix64(state ^ fnv1a64(name))`` so adding
    a new stream never changes the values drawn by existing ones.
    """
    state = seed & MASK64
    for name in names:
        state = splitmix64(state ^ fnv1a64(str(name)))
    return state


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """A numpy generator for the stream identified by ``(seed, *names)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *names)))
