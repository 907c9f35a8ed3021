"""Named random streams derived from one global seed.

Each consumer (phantom generation, weight init, cohort shuffling, ...)
draws from its own stream, so adding cases or reordering setup steps
does not perturb unrelated randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_rng(seed, name, index=None):
    """Generator for the named stream; ``index`` sub-splits a stream
    (e.g. one branch per phantom case)."""
    key = [int(seed), zlib.crc32(name.encode("utf-8"))]
    if index is not None:
        key.append(int(index))
    return np.random.default_rng(key)
