"""Deterministic random stream management.

Every consumer of randomness gets its own generator derived from a master
seed plus an integer key path, so results never depend on evaluation order,
worker count, or how many draws an unrelated component made.
"""

from __future__ import annotations

import numpy as np

# Top-level stream key domains, so independent consumers of one master seed
# can never collide.
KEY_INIT = 0
KEY_SHUFFLE = 1
KEY_NOISE = 2
KEY_DATA = 3
KEY_CERTIFY = 4


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``key``.

    The same (master_seed, key) pair always yields an identical stream;
    distinct key paths yield statistically independent streams.
    """
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    for part in key:
        if part < 0:
            raise ValueError(f"stream key parts must be non-negative, got {key}")
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def gauss_sample(rng: np.random.Generator, shape: tuple[int, ...], sigma: float) -> np.ndarray:
    """Centered isotropic Gaussian draws with standard deviation sigma."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma!r}")
    return sigma * rng.standard_normal(shape)
