"""Named random streams split from one integer seed.

Every consumer asks for ``stream(seed, purpose, index)``; the generator is
seeded from a hash of the triple, so adding a new consumer never shifts the
numbers another consumer sees.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(seed: int, purpose: str, index: int = 0) -> int:
    key = f"{int(seed)}\x1f{purpose}\x1f{int(index)}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=16).digest(), "little")


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, purpose, index))
