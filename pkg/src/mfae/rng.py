"""Seeded random streams.

All randomness in the package flows through counter-based Philox streams
keyed by the user seed.  Distinct stream indexes are separated by Philox
jumps (2**128 draws apart), so parallel consumers -- the training data
stream, the per-checkpoint evaluation draws, resample repeats -- never
overlap and every run is bit-reproducible from its seed alone.
"""

import numpy as np

# Fixed stream indexes used by the trainer; evaluation streams start above
# these and are keyed by step so that metric estimation never perturbs the
# training draws.
INIT_STREAM = 0
DATA_STREAM = 1
EVAL_STREAM_BASE = 2


def stream(seed, index=0):
    """Generator on the index-th disjoint substream of the given seed."""
    if not isinstance(index, (int, np.integer)) or index < 0:
        raise ValueError(f"stream index must be a nonnegative integer, got {index!r}")
    bitgen = np.random.Philox(key=int(seed) & ((1 << 128) - 1))
    if index:
        bitgen = bitgen.jumped(int(index))
    return np.random.Generator(bitgen)
