"""Deterministic 64-bit seed derivation shared by all stochastic stages."""

from __future__ import annotations

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a hash of a byte string, 64-bit."""
    h = _FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV64_PRIME) & _MASK64
    return h


def derive_seed(master_seed: int, name: str) -> int:
    """Stable per-name substream seed: FNV-1a of the UTF-8 name XOR master.

    Keyed by name rather than position, so adding, removing, or reordering
    sibling items never perturbs anyone else's stream.
    """
    return fnv1a64(name.encode("utf-8")) ^ (int(master_seed) & _MASK64)
