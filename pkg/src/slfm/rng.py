"""Deterministic RNG streams.

All randomness flows from one integer seed. Subsystem streams are derived
by stable hashing of (seed, stream name), so that e.g. parallel scene
generation and serial generation draw identical numbers.
"""

import zlib

import numpy as np


def stream(seed: int, *names) -> np.random.Generator:
    """Return the Generator for the stream identified by seed plus names.

    Names may be strings or integers; strings are hashed with crc32 so the
    derivation is stable across platforms and Python versions.
    """
    keys = [int(seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, str):
            keys.append(zlib.crc32(name.encode("utf-8")))
        else:
            keys.append(int(name) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))
