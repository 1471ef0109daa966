"""Named, independently seeded random streams.

Every random decision in a run draws from a stream keyed by
(run seed, purpose, ids...). The round index is the usual id, so results do
not depend on worker scheduling and a run can be resumed from its log.
"""

import numpy as np

SELECT = 1
EVALUATE = 2
LATENCY = 3
FIT = 4
POLICY = 5
TRUTH = 6

_MASK = (1 << 64) - 1


def stream(seed: int, purpose: int, *ids: int) -> np.random.Generator:
    words = [int(seed) & _MASK, purpose, *(int(i) for i in ids)]
    return np.random.default_rng(np.random.SeedSequence(words))


def child_seed(seed: int, purpose: int, *ids: int) -> int:
    return int(stream(seed, purpose, *ids).integers(1 << 63))
