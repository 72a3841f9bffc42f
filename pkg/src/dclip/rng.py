"""Named, reproducible random streams.

All randomness in the package flows through `stream(seed, name)`: the same
(seed, name) pair yields the same generator on every platform and run,
independent of call order and of Python's hash randomization. Distinct names
give statistically independent streams, so modules can draw from their own
streams without coordinating.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_entropy(name: str) -> list[int]:
    # sha256 -> four u64 words; stable across platforms and PYTHONHASHSEED
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a fresh generator for the (seed, name) pair."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=_name_entropy(name))
    return np.random.Generator(np.random.PCG64(ss))


def uniform_init(seed: int, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) float32 draw from a named stream."""
    bound = 1.0 / float(np.sqrt(fan_in))
    return stream(seed, name).uniform(-bound, bound, size=shape).astype(np.float32)
