#!/usr/bin/env python3
"""
Named random sub-streams derived from one root seed.

Every consumer asks for ``stream(seed, "name", ids...)``; the same arguments
always yield the same generator, and different names never share state.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("stream keys must be int or str")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(key.encode('utf-8'))


def seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key_to_int(seed)] + [_key_to_int(k) for k in keys])


def stream(seed: int, *keys: Key) -> np.random.Generator:
    """Independent generator for (seed, keys...)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))
