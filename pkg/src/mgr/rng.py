"""Named, independent random streams derived from a single integer seed."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream(seed, *names):
    """A Generator keyed by ``(seed, *names)``; equal keys give equal streams."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names)))
