"""Named random streams derived from a single master seed.

Every consumer of randomness asks for a stream by name, e.g.
``derive_rng(seed, "schedule")`` or ``derive_rng(seed, "eval", step, rep)``.
The split hashes the name with CRC-32 (stable across processes, unlike
``hash``) and feeds ``[seed, crc, *indices]`` to :class:`numpy.random.SeedSequence`,
so streams with different names or indices are statistically independent and
identical inputs always give bit-identical draws.
"""

import zlib

import numpy as np


def stream_key(name):
    return zlib.crc32(name.encode("utf-8"))


def derive_seed_sequence(seed, name, *indices):
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name)]
    entropy.extend(int(i) for i in indices)
    return np.random.SeedSequence(entropy)


def derive_rng(seed, name, *indices):
    return np.random.default_rng(derive_seed_sequence(seed, name, *indices))
