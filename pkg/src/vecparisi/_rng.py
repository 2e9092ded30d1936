"""Named random streams derived from a single root seed."""

import zlib

import numpy as np


def stream(seed, *names):
    """Return a Generator for the stream ``names`` under root ``seed``.

    The same (seed, names) pair always yields the same stream, and distinct
    names give statistically independent streams.
    """
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
