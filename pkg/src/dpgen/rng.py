"""Seed derivation.

Every random stream in a run is derived from the master seed with
``numpy.random.SeedSequence(master, spawn_key=(stream, *counters))`` and fed
to a PCG64 bit generator. Gaussian variates come from numpy's ziggurat
sampler (``Generator.normal``/``standard_normal``), so bit-exact
reproducibility holds for a fixed numpy version only; the version is stamped
into checkpoints.

Stream ids are fixed integers and must never be renumbered.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "partition": 1,
    "init": 2,
    "projection": 3,
    "noise": 4,
    "sampling": 5,
    "teacher": 6,
    "laplace": 7,
    "generate": 8,
}


def derive_rng(master_seed: int, stream: str, *counters: int) -> np.random.Generator:
    """Independent generator for ``stream`` (and optional counters) under ``master_seed``."""
    key = (STREAMS[stream],) + tuple(int(c) for c in counters)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed: int, stream: str, *counters: int) -> int:
    """A 63-bit integer seed derived the same way as :func:`derive_rng`."""
    key = (STREAMS[stream],) + tuple(int(c) for c in counters)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
