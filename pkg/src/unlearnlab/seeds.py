"""Deterministic rng streams.

Every stochastic step draws from a generator keyed by (seed, stream tag,
extra ids...), so reruns with the same seed reproduce byte-identical
results and no stream ever aliases another.
"""

import numpy as np

SYNTH_MEANS = 1
SYNTH_SAMPLES = 2
SPLIT = 3
AUGMENT = 4
NET_INIT = 5
SHUFFLE_MAIN = 6
SHUFFLE_SIDE = 7
AUDIT_VIEWS = 8
MI_VIEWS = 9
MI_MEMBERS = 10
PROBE_SHUFFLE = 11
PROBE_INIT = 12


def stream_rng(seed: int, *tags: int) -> np.random.Generator:
    """Generator for a named stream under a base seed."""
    return np.random.default_rng((int(seed),) + tuple(int(t) for t in tags))
