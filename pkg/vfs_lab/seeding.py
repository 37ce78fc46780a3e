"""
Named random streams derived from one u64 master seed.

stream = hash(seed, purpose...) so every consumer draws from its own
generator and results never depend on call order or thread scheduling.
"""

import hashlib
from typing import Union

import numpy as np

U64_MASK = (1 << 64) - 1

Part = Union[int, str]


def stream_seed(seed: int, *purpose: Part) -> int:
    """Derive a u64 seed for the stream named by `purpose`."""
    text = ":".join([str(int(seed) & U64_MASK)] + [str(p) for p in purpose])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, *purpose: Part) -> np.random.Generator:
    """Generator for the named stream."""
    return np.random.Generator(np.random.PCG64(stream_seed(seed, *purpose)))
