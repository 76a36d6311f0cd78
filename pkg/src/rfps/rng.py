"""Counter-based random streams.

Every randomized routine in the package draws from a Philox stream derived
from ``(seed, *key)``.  Streams are indexed, not sequential: the draws for
subset ``i`` or column ``j`` depend only on the seed and that index, so work
can be re-ordered or parallelized without changing any result.
"""

import numpy as np


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def column_seed_key(j: int) -> tuple:
    # stable per-column stream id used by the marginal screens
    return (0x6A, int(j))
