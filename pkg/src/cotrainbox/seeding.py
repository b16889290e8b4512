"""Deterministic RNG derivation.

Every random draw in the engine and the simulator comes from a generator
derived here. Keys mix integers and strings; strings are hashed with
blake2s so the derivation does not depend on PYTHONHASHSEED or process
state. Identical key tuples give identical generators on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, bool):  # bool is an int subclass, keep it out
        raise TypeError("bool is not a valid rng key")
    if isinstance(key, int):
        return key & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"rng keys must be int or str, got {type(key).__name__}")


def child_rng(*keys: int | str) -> np.random.Generator:
    """Return a Generator deterministically derived from the key tuple."""
    entropy = [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
