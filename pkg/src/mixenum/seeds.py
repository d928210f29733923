"""Deterministic seed derivation for parallel-safe replication streams.

All randomness in the package flows through PCG64 generators seeded from
``derive_seed`` so that serial and parallel executions of the same plan
produce identical results.
"""

from __future__ import annotations

import numpy as np

RNG_NAME = "pcg64"


def derive_seed(master_seed: int, *path: int) -> int:
    """Collapse (master_seed, *path) into one reproducible 63-bit seed."""
    seq = np.random.SeedSequence([int(master_seed) & 0x7FFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide generator (PCG64) for a derived seed."""
    return np.random.Generator(np.random.PCG64(seed))
