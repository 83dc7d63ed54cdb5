"""Gaussian data laws with a prescribed covariance spectrum.

A model holds the per-direction variance scales (eigenvalues), an optional
rotation, and samples x ~ N(0, R diag(eigvals) R^T / d).  The 1/d scaling
keeps E||x||^2 = mean(eigvals) independent of dimension.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = [
    "SpectralModel",
    "TwoBlockModel",
    "make_spectral_model",
    "sample",
    "second_moment_trace",
    "load_spectrum",
    "save_spectrum",
]

ORTHO_TOL = 1e-10
SMALL_EIGVAL_WARN = 1e-5


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Zero-mean Gaussian law with covariance R diag(eigvals) R^T / d.

    eigvals are sorted nonincreasing and strictly positive; rotation is
    None for the identity (kept as a sentinel so sampling stays O(n*d)).
    """

    eigvals: np.ndarray
    rotation: np.ndarray | None = None

    @property
    def dim(self):
        return self.eigvals.shape[0]

    def covariance(self):
        cov = np.diag(self.eigvals / self.dim)
        if self.rotation is not None:
            cov = self.rotation @ cov @ self.rotation.T
        return cov

    def __eq__(self, other):
        if not isinstance(other, SpectralModel):
            return NotImplemented
        if not np.array_equal(self.eigvals, other.eigvals):
            return False
        if (self.rotation is None) != (other.rotation is None):
            return False
        return self.rotation is None or np.array_equal(self.rotation, other.rotation)


@dataclass(frozen=True)
class TwoBlockModel:
    """Two-block diagonal spectrum: d1 directions at sigma1_sq, d2 at sigma2_sq.

    The bounded-activation theory requires both blocks larger than 16.
    """

    d1: int
    d2: int
    sigma1_sq: float
    sigma2_sq: float

    def __post_init__(self):
        if self.d1 <= 16 or self.d2 <= 16:
            raise ValueError("two-block model requires d1 > 16 and d2 > 16")
        if self.sigma1_sq <= 0 or self.sigma2_sq <= 0:
            raise ValueError("block variances must be positive")

    @property
    def dim(self):
        return self.d1 + self.d2

    @property
    def alpha(self):
        return self.d1 / (self.d1 + self.d2)

    def to_spectral(self):
        eigvals = np.concatenate(
            [np.full(self.d1, self.sigma1_sq), np.full(self.d2, self.sigma2_sq)]
        )
        return make_spectral_model(eigvals)


def make_spectral_model(eigvals, rotation=None):
    """Validate and normalize a spectrum (sorted descending) into a model.

    When the input is unsorted, the rotation's columns are permuted along
    with the eigenvalues so the covariance is unchanged.
    """
    eigvals = np.asarray(eigvals, dtype=float).copy()
    if eigvals.ndim != 1 or eigvals.size == 0:
        raise ValueError("eigvals must be a nonempty 1-d sequence")
    if np.any(eigvals <= 0) or not np.all(np.isfinite(eigvals)):
        raise ValueError("all eigenvalues must be positive and finite")

    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    if eigvals[-1] < SMALL_EIGVAL_WARN:
        warnings.warn(
            f"smallest eigenvalue {eigvals[-1]:g} is below {SMALL_EIGVAL_WARN:g}; "
            "the mean-field approximation degrades for near-degenerate spectra",
            stacklevel=2,
        )

    if rotation is not None:
        rotation = np.asarray(rotation, dtype=float)
        d = eigvals.size
        if rotation.shape != (d, d):
            raise ValueError(f"rotation must be {d}x{d}, got {rotation.shape}")
        gram_err = np.abs(rotation.T @ rotation - np.eye(d))
        if gram_err.max() > ORTHO_TOL:
            raise ValueError(
                f"rotation is not orthogonal (max |R^T R - I| = {gram_err.max():.3e})"
            )
        rotation = rotation[:, order].copy()
        rotation.setflags(write=False)

    eigvals.setflags(write=False)
    return SpectralModel(eigvals=eigvals, rotation=rotation)


def sample(model, n, seed):
    """Draw n i.i.d. rows from the model; deterministic given the seed."""
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    return sample_with(model, n, rng)


def sample_with(model, n, rng):
    """Like sample(), drawing from an existing generator (hot path)."""
    d = model.dim
    x = rng.standard_normal((n, d))
    x *= np.sqrt(model.eigvals / d)
    if model.rotation is not None:
        x = x @ model.rotation.T
    return x


def second_moment_trace(model):
    """E||x||^2 under the model: the mean of the eigenvalues.

    Exact summation, and the two-block form goes through its expansion, so
    the expansion preserves the trace bit-for-bit.
    """
    if isinstance(model, TwoBlockModel):
        model = model.to_spectral()
    return math.fsum(model.eigvals) / model.dim


def load_spectrum(path):
    """Read a spectrum file: one positive eigenvalue per line."""
    values = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ValueError(f"{path}:{line_no}: not a number: {text!r}") from None
    if not values:
        raise ValueError(f"{path}: empty spectrum file")
    return np.asarray(values)


def save_spectrum(path, eigvals):
    with open(path, "w") as fh:
        for v in np.asarray(eigvals, dtype=float):
            fh.write(f"{v:.17g}\n")
