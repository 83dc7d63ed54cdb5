"""Closed-form mean-field predictions for the ReLU autoencoder.

Each principal direction carries a rescaling factor r(t) that solves the
scalar flow  dr/dt = -r (0.5*S2*r^2 - S2 + 2*l2)  from r(0) = r0, where S2
is the direction's variance scale.  Everything else here -- risk curves,
block norms, the limiting particle map, the subsampled-risk formula -- is
an explicit function of those factors.
"""

import math

import numpy as np

from .spectral import SpectralModel

__all__ = [
    "rescale_factor",
    "rescale_ode_rhs",
    "risk",
    "mf_particles",
    "block_norm_prediction",
    "two_stage_risk",
]

def rescale_ode_rhs(r, sigma_sq, l2):
    """Right-hand side of the per-direction flow (used by oracles/tests)."""
    return -r * (0.5 * sigma_sq * r * r - sigma_sq + 2.0 * l2)


def _exprel(x):
    # expm1(x)/x continued by 1 at x = 0; inf for overflowing x is fine
    # because every use multiplies it by a strictly positive factor.
    out = np.ones_like(x)
    nz = x != 0.0
    out[nz] = np.expm1(x[nz]) / x[nz]
    return out


def rescale_factor(sigma_sq, l2, r0, t):
    """Rescaling factor r(t) >= 0; broadcasts over sigma_sq and t.

    Evaluated as  r^2 = r0^2 / (r0^2 * S2 * t * exprel(-2*eta*t) + e^(-2*eta*t))
    with eta = S2 - 2*l2.  This equals the textbook closed form away from
    the decay threshold and continues it across eta = 0 without the 0/0
    cancellation, so no special-case branch is needed; overflow of the
    growing exponential (deep in the shrinking regime) lands on the exact
    limit r = 0.
    """
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(sigma_sq <= 0):
        raise ValueError("sigma_sq must be positive")
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if r0 < 0:
        raise ValueError("r0 must be nonnegative")

    eta, t = np.broadcast_arrays(sigma_sq - 2.0 * l2, t)
    sigma_sq = np.broadcast_to(sigma_sq, eta.shape)
    scalar = eta.ndim == 0
    if r0 == 0.0:
        return 0.0 if scalar else np.zeros(eta.shape)

    x = np.atleast_1d(-2.0 * eta * t)
    with np.errstate(over="ignore"):
        denom = (r0 * r0) * np.atleast_1d(sigma_sq * t) * _exprel(x) + np.exp(x)
    out = r0 / np.sqrt(denom)
    return float(out[0]) if scalar else out


def _eigvals(model):
    return model.eigvals if isinstance(model, SpectralModel) else np.asarray(model, dtype=float)


def risk(model, l2, r0, t):
    """Predicted reconstruction error (1/2d) sum_i S2_i (1 - r_i(t)^2/2)^2.

    Accumulated with exact compensated summation so the prediction stays
    trustworthy out to d ~ 1e4 directions.
    """
    eig = _eigvals(model)
    r_sq = rescale_factor(eig, l2, r0, t) ** 2
    terms = eig * (1.0 - 0.5 * r_sq) ** 2
    return math.fsum(terms) / (2.0 * eig.size)


def mf_particles(theta0, model, l2, r0, t):
    """Limit-law trajectory of initial particles: R diag(r(t)/r0) R^T theta0.

    theta0 may be a single d-vector or an (n, d) stack.  By convention the
    map is the identity when r0 = 0 (the origin is stationary).
    """
    eig = _eigvals(model)
    theta0 = np.asarray(theta0, dtype=float)
    if r0 == 0.0:
        return theta0.copy()
    scale = rescale_factor(eig, l2, r0, t) / r0
    rotation = model.rotation if isinstance(model, SpectralModel) else None
    if rotation is None:
        return theta0 * scale
    return (theta0 @ rotation) * scale @ rotation.T


def block_norm_prediction(model, l2, r0, t, block_sizes):
    """Predicted normalized squared block norms: blockwise means of r(t)^2."""
    eig = _eigvals(model)
    sizes = [int(s) for s in block_sizes]
    if any(s <= 0 for s in sizes) or sum(sizes) != eig.size:
        raise ValueError(f"block sizes {sizes} do not partition {eig.size} directions")
    r_sq = rescale_factor(eig, l2, r0, t) ** 2
    out = np.empty(len(sizes))
    start = 0
    for k, size in enumerate(sizes):
        out[k] = math.fsum(r_sq[start : start + size]) / size
        start += size
    return out


def two_stage_risk(model, l2, r0, t, mu):
    """Risk of an autoencoder built from M = mu*d resampled trained neurons.

    Training term (= risk) plus the sampling term
    (1/(4*mu*d^2)) * (sum_i r_i^2) * (sum_i r_i^2 S2_i).
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    eig = _eigvals(model)
    d = eig.size
    r_sq = rescale_factor(eig, l2, r0, t) ** 2
    sampling = math.fsum(r_sq) * math.fsum(r_sq * eig) / (4.0 * mu * d * d)
    return risk(model, l2, r0, t) + sampling
