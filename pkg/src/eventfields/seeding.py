"""Deterministic random-stream derivation from one master seed.

Every stochastic component draws from its own ``numpy.random.Generator``,
derived from the master seed plus a purpose tag and optional indices. Streams
are independent of each other and of execution order, which is what makes
dataset generation and training byte-reproducible.
"""

from __future__ import annotations

import numpy as np

# purpose tags (first path element after the master seed)
TRAJECTORY = 1  # per-trajectory field draw + thinning
MODEL_INIT = 2  # parameter initialization
TRAINING = 3  # minibatch order, posterior samples, MC points
EVALUATION = 4  # evaluation-time MC points and posterior draws
BENCH = 5  # benchmark synthetic inputs


def rng_stream(master_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (master_seed, *path)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), *(int(p) for p in path)])
    )
