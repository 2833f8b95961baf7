"""Named random sub-streams derived from one run seed."""

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. "init", "shuffle", "augment").

    The same (seed, name, extra) always yields the same stream, regardless of
    which other streams have been consumed.
    """
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *[int(e) for e in extra]]
    return np.random.default_rng(np.random.SeedSequence(key))
