"""Counter-based random streams keyed by (experiment, seed, replica).

Each replica gets its own Philox generator whose key is a hash of the triple,
so results do not depend on execution order or on how work is split across
workers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream_key(experiment: str, seed: int, replica: int = 0) -> int:
    h = hashlib.blake2b(f"{experiment}|{int(seed)}|{int(replica)}".encode(), digest_size=16)
    return int.from_bytes(h.digest(), "little")


def stream(experiment: str, seed: int, replica: int = 0) -> np.random.Generator:
    """A reproducible generator for one replica of one experiment."""
    return np.random.Generator(np.random.Philox(key=stream_key(experiment, seed, replica)))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
