"""Derived random streams.

Every trial or dataset candidate gets its own generator keyed by
``(master_seed, stream, *indices)``, so results never depend on how work is
split across processes. The stream tag keeps e.g. dataset candidate 0 and
the training shuffle apart (``SeedSequence`` treats trailing zeros as
absent, so bare index tuples could collide).
"""

import numpy as np

DATASET = 1
TRAIN = 2
SWEEP = 3
INIT = 4
MISC = 5


def derive_rng(seed: int, stream: int = MISC, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
