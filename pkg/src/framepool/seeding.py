"""Named, reproducible RNG sub-streams derived from one root seed."""

import zlib

import numpy as np


def derive_seed(root, *components):
    """Stable 64-bit seed from a root seed plus named/indexed components.

    Strings hash via crc32; integers pass through. Built on SeedSequence,
    so the mapping is identical across platforms and runs.
    """
    parts = [int(root) & 0xFFFFFFFF]
    for c in components:
        if isinstance(c, str):
            parts.append(zlib.crc32(c.encode("utf-8")))
        else:
            parts.append(int(c) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(parts).generate_state(1, np.uint64)[0])


def generator(root, *components):
    return np.random.Generator(np.random.PCG64(derive_seed(root, *components)))
