"""Named, independently seeded random streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for ``name``; the same (seed, name, extra) always matches."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())] + [int(e) & 0xFFFFFFFF for e in extra]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
