"""Seeded random streams.

Streams come from the counter-based Philox bit generator keyed by a
``SeedSequence``.  The split rule is fixed: the stream for replication ``r``
and input ``j`` is ``SeedSequence(seed, spawn_key=(r, j))``.  Baselines use
input slots past the model dimension (see ``SOBOL_SLOT``), so they never
overlap a design stream.  Results therefore do not depend on the order in
which streams are consumed or on how work is scheduled across threads.
"""

from __future__ import annotations

import numpy as np

SOBOL_SLOT = 1_000


def stream(seed: int, replication: int = 0, slot: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication), int(slot)))
    return np.random.Generator(np.random.Philox(ss))
