"""Seed derivation.

Every random stream in the package is derived from an integer seed plus a
tuple of integer keys, so that independent components never share a stream
and results do not depend on call order.
"""

import numpy as np

# stream tags
DATA = 1
PARTITION = 2
NOISE = 3
VALSPLIT = 4
MODEL_INIT = 10
TRAIN = 11
MATRIX = 20
SELECTION = 21
REPETITION = 30


def derive_seed(seed, *keys):
    """Return a 64-bit integer seed derived from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]]))
