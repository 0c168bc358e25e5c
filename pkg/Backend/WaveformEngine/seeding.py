# Backend/WaveformEngine/seeding.py

from __future__ import annotations

import hashlib

import numpy as np


_MASK64 = (1 << 64) - 1


def seeded_rng(seed: int, *streams: int) -> np.random.Generator:
    """
    Independent generator for (seed, stream...) so results never depend on
    call order or worker scheduling. Any 64-bit seed is accepted, negatives too.
    """
    entropy = [int(seed) & _MASK64] + [int(s) & _MASK64 for s in streams]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stable_hash(*parts: str) -> int:
    """64-bit hash of text that, unlike hash(), is stable across processes."""
    digest = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
