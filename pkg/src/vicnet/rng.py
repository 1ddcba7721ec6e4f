"""Named, reproducible random streams derived from one integer seed."""
import zlib

import numpy as np


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``name`` (and optional integer keys).

    The same (seed, name, keys) always yields the same stream, and distinct
    names never share state, so adding a consumer does not perturb others.
    """
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    entropy.extend(int(k) & 0xFFFFFFFF for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
