"""Counter-based random streams keyed by ``(seed, replication, stage)``.

Each stream is an independent Philox generator whose key is derived from the
triple, so a replication draws the same numbers no matter which worker runs
it or in what order.
"""

from __future__ import annotations

import numpy as np

COVARIATES = 0
NOISE = 1


def stream(seed: int, replication: int, stage: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), int(stage)))
    return np.random.Generator(np.random.Philox(ss))
