"""Random stream derivation.

Every stochastic stage gets its own ``numpy.random.Generator`` built from the
master seed and an integer key path, e.g. ``("train", position, grid_index)``.
Keys are hashed into the ``spawn_key`` of a ``SeedSequence``, so streams for
different keys are independent and a stream never depends on how many other
streams were created before it.
"""

from __future__ import annotations

import zlib

import numpy as np

_STAGES = {
    "simulate": 1,
    "mc_lip": 2,
    "train": 3,
    "bound": 4,
    "forecast": 5,
    "validate": 6,
    "pit": 7,
    "target_log": 8,
}


def _key_part(k) -> int:
    if isinstance(k, str):
        return _STAGES.get(k, zlib.crc32(k.encode()) | (1 << 32))
    return int(k)


def derive_seed(master_seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_part(k) for k in key))


def derive_rng(master_seed: int, *key) -> np.random.Generator:
    """Independent generator for ``key`` under ``master_seed``."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *key)))
