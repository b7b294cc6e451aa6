"""Deterministic seed derivation for Monte-Carlo trials and worker streams.

Every per-trial seed is derived from the master seed with the splitmix64
finalizer, so streams are identical on every platform and independent of
how work is distributed across threads.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One round of the splitmix64 mixer on a 64-bit integer."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(*parts):
    """Fold integer parts into one 64-bit seed.

    ``mix_seed(m, t, v) = splitmix64(splitmix64(splitmix64(m) ^ t) ^ v)``
    with every part reduced modulo 2**64 first.
    """
    h = 0
    for i, part in enumerate(parts):
        p = int(part) & MASK64
        h = splitmix64(p) if i == 0 else splitmix64(h ^ p)
    return h


def trial_seed(master_seed, trial_index, value_index=0):
    return mix_seed(master_seed, trial_index, value_index)


def make_rng(seed):
    """PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def worker_rng(master_seed, worker_index):
    """Private stream for batch/worker ``worker_index``."""
    return make_rng(mix_seed(master_seed, 0x5EED, worker_index))
