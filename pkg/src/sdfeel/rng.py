"""Named, seedable random streams.

Every random draw in the package comes from :func:`stream`, which derives a
``numpy.random.Generator`` (PCG64) from ``(master seed, purpose label,
indices...)`` through :class:`numpy.random.SeedSequence`.  Two calls with the
same key always return generators producing identical sequences, and no
ambient entropy is ever consulted.
"""
from __future__ import annotations

import zlib

import numpy as np


def purpose_code(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return the generator for ``(seed, purpose, *indices)``."""
    key = [int(seed), purpose_code(purpose), *(int(i) for i in indices)]
    if any(k < 0 for k in key):
        raise ValueError(f"stream key entries must be non-negative, got {key}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
