"""Seeded random streams.

Every consumer of randomness asks for its own stream keyed by a short name
(``"weights"``, ``"biases"``, ``"gibbs"``, ...).  A stream is a PCG64
generator seeded from ``SeedSequence(seed, spawn_key=(crc32(name), ...))``,
so streams are independent of one another, independent of the order in
which they are requested, and identical across platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError("stream keys must be non-negative")
    return int(part)


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the generator for ``seed`` and the sub-stream path ``keys``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys: int | str) -> int:
    """A 63-bit integer seed for the sub-stream path ``keys``."""
    return int(stream(seed, *keys).integers(0, 2**63 - 1))
