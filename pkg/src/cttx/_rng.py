"""Seeded, order-independent random streams."""

import numpy as np

MASK64 = (1 << 64) - 1


def path_rng(seed, index=0):
    """Generator for path ``index`` of an ensemble with master ``seed``.

    The stream depends only on (seed, index), so ensembles are reproducible
    regardless of the order paths are generated in.
    """
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def sub_seed(seed, tag):
    """Derive an independent master seed for a named sub-experiment."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(0xC77, int(tag)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
