"""Named, versioned PRNG streams derived from one 64-bit master seed.

Every source of randomness in the package pulls a generator from here so
that runs are reproducible across processes and methods stay comparable
(the same instance stream is used regardless of which solver consumes it).
"""

from __future__ import annotations

import zlib

import numpy as np

STREAM_VERSION = 1


def _key(name) -> int:
    return zlib.crc32(str(name).encode("utf-8"))


def stream(master_seed: int, *names) -> np.random.Generator:
    """Generator for the purpose identified by ``names`` (strings or ints)."""
    spawn_key = (STREAM_VERSION,) + tuple(_key(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed),
                                                        spawn_key=spawn_key))


def substream_seed(master_seed: int, *names) -> int:
    """A derived 63-bit seed, for APIs that take seeds rather than generators."""
    return int(stream(master_seed, *names).integers(0, 2 ** 63 - 1))
