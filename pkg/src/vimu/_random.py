"""Named random substreams derived from one 64-bit seed.

``substream(seed, "imu", 3, "gyro")`` always yields the same generator, and
adding or removing other consumers never shifts its draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: str | int) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def substream(seed: int, *names: str | int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(_key(n) for n in names)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(seed_or_rng, *names: str | int) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return substream(seed_or_rng, *names)
