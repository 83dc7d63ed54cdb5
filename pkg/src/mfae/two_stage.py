"""Neuron subsampling: build a small autoencoder from a trained one.

The derived machine takes M rows drawn i.i.d. (with replacement) from the
trained weight matrix and is evaluated with the ordinary reconstruction
pipeline; no retraining happens.
"""

import math

import numpy as np

from . import sgd
from .rng import stream

__all__ = ["subsample_neurons", "derived_risk", "resample_study"]


def subsample_neurons(weights, m, seed):
    """M rows drawn independently and uniformly, with replacement."""
    if m < 1:
        raise ValueError("need m >= 1 sampled neurons")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    idx = rng.integers(0, weights.shape[0], size=m)
    return weights[idx]


def derived_risk(sampled_weights, model, act, n_mc, seed):
    """Monte-Carlo reconstruction error of the derived autoencoder."""
    return sgd.estimate_rec_err(sampled_weights, model, act, n_mc, seed)


def resample_study(weights, model, act, m_list, repeats, n_mc, seed):
    """Mean derived risk per M over independent resample repeats.

    Returns rows (m, mu, mean, std_error); the reported error is the
    spread of the repeat estimates, which already contains their
    Monte-Carlo noise.  Repeats draw from disjoint substreams, so the
    study is reproducible and repeats could run concurrently.
    """
    if repeats < 2:
        raise ValueError("need >= 2 repeats for a standard error")
    d = weights.shape[1]
    rows = []
    for k, m in enumerate(m_list):
        estimates = np.empty(repeats)
        for rep in range(repeats):
            sub_rng = stream(seed, 2 * (k * repeats + rep))
            mc_rng = stream(seed, 2 * (k * repeats + rep) + 1)
            sampled = subsample_neurons(weights, m, sub_rng)
            estimates[rep] = derived_risk(sampled, model, act, n_mc, mc_rng).mean
        rows.append(
            (
                int(m),
                m / d,
                float(estimates.mean()),
                float(estimates.std(ddof=1) / math.sqrt(repeats)),
            )
        )
    return rows
