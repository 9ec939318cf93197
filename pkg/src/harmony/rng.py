"""Deterministic per-purpose RNG streams.

Every stochastic choice in the pipeline (crops, masks, shuffles) draws from
a stream derived from (base seed, purpose label, indices). Streams are
stateless across steps, so a resumed run replays the exact same randomness
without carrying generator state in checkpoints.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *parts: int | str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(base_seed).encode())
    for part in parts:
        h.update(b"\x00")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def stream(base_seed: int, *parts: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *parts))
