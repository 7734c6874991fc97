"""Named random streams derived from a single master seed.

Every source of randomness in the package (tree-pruning folds, tuning
folds, permutation tests, simulation replications) draws from its own
stream so that results are reproducible bit-for-bit regardless of
execution order or worker count.
"""

import numpy as np

# Stream identifiers. Each consumer derives its generator as
# derived_rng(seed, STREAM_X, extra...) so streams never collide.
STREAM_TREE_CV = 0
STREAM_TUNE_FOLDS = 1
STREAM_PERMUTATION = 2
STREAM_SIMULATION = 3


def derived_rng(seed, *path):
    """Return a Generator for the stream identified by ``path``.

    Identical (seed, path) pairs always produce identical generators.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))
