"""Deterministic RNG streams derived from a single run seed.

Every stochastic phase of a run pulls from its own child generator so that
adding or reordering phases never perturbs the draws of another phase.
"""

import numpy as np

# Stream tags; keep values stable or saved runs stop being reproducible.
DATASET_STREAM = 1
BASE_TRAIN_STREAM = 2
TILT_STREAM = 3
FINAL_SAMPLE_STREAM = 4
EVAL_STREAM = 5


def child_rng(seed, *key):
    """Generator for stream `key` of run `seed`; same args give the same stream."""
    spawn_key = tuple(int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))
