"""Mini-batch SGD for the mean-field-scaled weight-tied autoencoder.

The network maps x to (1/N) sum_i k*w_i*sigma(<k*w_i, x>) with k = sqrt(d).
Weights are a plain (N, d) float array; the scaling factor is implied by
the column count.  Each SGD step applies the amplified gradient of the
half squared reconstruction loss plus the l2 penalty, with every neuron's
gradient computed from the pre-update weights.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .rng import DATA_STREAM, EVAL_STREAM_BASE, INIT_STREAM, stream

__all__ = [
    "TrainConfig",
    "RiskEstimate",
    "Checkpoint",
    "DivergenceError",
    "init_weights",
    "reconstruct",
    "reconstruct_batch",
    "sgd_step",
    "estimate_rec_err",
    "dataset_rec_err",
    "subspace_norms",
    "train",
    "save_weights",
    "load_weights",
]

DIVERGENCE_LIMIT = 1e6
SNAPSHOT_MAGIC = b"MFAE"
SNAPSHOT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when a weight leaves the stable region; carries the step."""

    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"training diverged at step {step}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class TrainConfig:
    """Full description of one SGD run (constant learning-rate schedule)."""

    l2: float = 0.0
    learning_rate: float = 0.01
    batch_size: int = 100
    steps: int = 10_000
    r0: float = 0.2
    seed: int = 0
    checkpoints: tuple = field(default=None)

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 strength must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.r0 < 0:
            raise ValueError("r0 must be >= 0")
        cps = self.checkpoints
        if cps is None:
            cps = default_checkpoints(self.steps)
        cps = tuple(int(c) for c in cps)
        if sorted(set(cps)) != list(cps):
            raise ValueError("checkpoints must be strictly increasing")
        if cps and (cps[0] < 0 or cps[-1] > self.steps):
            raise ValueError("checkpoints must lie in [0, steps]")
        object.__setattr__(self, "checkpoints", cps)


def default_checkpoints(steps, count=30):
    """Step 0, then roughly log-spaced checkpoints up to the final step."""
    if steps == 0:
        return (0,)
    pts = np.unique(np.geomspace(1, steps, num=min(count, steps)).astype(int))
    return (0, *pts.tolist())


@dataclass(frozen=True)
class RiskEstimate:
    """Monte-Carlo mean and standard error of the reconstruction error."""

    mean: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class Checkpoint:
    """Metrics emitted during training.

    ``weights`` aliases the live training buffer and is only valid until
    the next step; copy it to keep a snapshot.
    """

    step: int
    time: float
    rec_err: RiskEstimate
    block_norms: np.ndarray
    weights: np.ndarray


def init_weights(n_neurons, dim, r0, seed):
    """Rows i.i.d. N(0, r0^2 I / d); deterministic given the seed."""
    if r0 < 0:
        raise ValueError("r0 must be >= 0")
    rng = stream(seed, INIT_STREAM)
    return (r0 / math.sqrt(dim)) * rng.standard_normal((n_neurons, dim))


def _canonical_rows(weights):
    # Lexicographic row order makes the neuron reduction independent of the
    # order the rows arrived in, so permuting neurons is bit-neutral.
    order = np.lexsort(weights.T[::-1])
    return weights[order]


def reconstruct_batch(weights, x, act, canonical=True):
    """Autoencoder outputs for a batch of rows x (shape (b, d))."""
    if canonical:
        weights = _canonical_rows(weights)
    n, d = weights.shape
    kappa = math.sqrt(d)
    pre = (kappa * x) @ weights.T
    return (kappa / n) * (act(pre) @ weights)


def reconstruct(weights, x, act):
    """Autoencoder output for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a vector; use reconstruct_batch for batches")
    return reconstruct_batch(weights, x[None, :], act)[0]


def sgd_step(weights, batch, cfg, act):
    """One simultaneous SGD update from a (b, d) mini-batch.

    Returns the updated weight matrix (a new array).  Raises
    DivergenceError if any weight becomes non-finite or exceeds the
    stability limit.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    new_weights = weights - cfg.learning_rate * _gradient(weights, batch, cfg.l2, act)
    _check_stable(new_weights)
    return new_weights


def _gradient(weights, batch, l2, act):
    # Amplified batch-averaged gradient:
    #   (k/b) S^T (xh - x) + (k^2/b) (S' * (W (xh-x)^T)) x + 2*l2*W
    # with S = sigma(k x W^T) elementwise and all terms from pre-update W.
    n, d = weights.shape
    b = batch.shape[0]
    kappa = math.sqrt(d)
    pre = (kappa * batch) @ weights.T
    sig = act(pre)
    delta = (kappa / n) * (sig @ weights) - batch
    grad = (kappa / b) * (sig.T @ delta)
    inner = weights @ delta.T
    grad += (kappa * kappa / b) * ((act.derivative(pre).T * inner) @ batch)
    if l2:
        grad += (2.0 * l2) * weights
    return grad


def _check_stable(weights, step=None):
    bad = not np.all(np.isfinite(weights))
    if not bad:
        peak = np.abs(weights).max()
        bad = peak > DIVERGENCE_LIMIT
    if bad:
        raise DivergenceError(step, "non-finite or oversized weight")


def estimate_rec_err(weights, model, act, n_mc, seed):
    """Monte-Carlo estimate of E[ 0.5 ||xhat(x) - x||^2 ] over fresh draws."""
    if n_mc < 2:
        raise ValueError("need n_mc >= 2 for a standard error")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    w = _canonical_rows(weights)
    total = 0.0
    total_sq = 0.0
    chunk = 4096
    remaining = n_mc
    while remaining > 0:
        b = min(chunk, remaining)
        x = spectral.sample_with(model, b, rng)
        err = 0.5 * np.sum((reconstruct_batch(w, x, act, canonical=False) - x) ** 2, axis=1)
        total += float(err.sum())
        total_sq += float((err * err).sum())
        remaining -= b
    mean = total / n_mc
    var = max(total_sq / n_mc - mean * mean, 0.0) * n_mc / (n_mc - 1)
    return RiskEstimate(mean=mean, std_error=math.sqrt(var / n_mc), n_samples=n_mc)


def dataset_rec_err(weights, x, act):
    """Average reconstruction error over a fixed dataset (rows of x)."""
    x = np.asarray(x, dtype=float)
    w = _canonical_rows(weights)
    n = x.shape[0]
    errs = np.empty(n)
    for start in range(0, n, 4096):
        sl = slice(start, min(start + 4096, n))
        diff = reconstruct_batch(w, x[sl], act, canonical=False) - x[sl]
        errs[sl] = 0.5 * np.sum(diff * diff, axis=1)
    se = errs.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return RiskEstimate(mean=float(errs.mean()), std_error=float(se), n_samples=n)


def subspace_norms(weights, block_sizes, rotation=None):
    """Normalized squared block norms (d / (d_b * N)) sum_i ||w_i,block||^2.

    Blocks are the contiguous coordinate groups of the given sizes, which
    must partition the d coordinates; when the data law carries an explicit
    rotation, weights are first mapped to the eigenbasis.
    """
    n, d = weights.shape
    sizes = [int(s) for s in block_sizes]
    if any(s <= 0 for s in sizes) or sum(sizes) != d:
        raise ValueError(f"block sizes {sizes} do not partition {d} coordinates")
    if rotation is not None:
        weights = weights @ rotation
    sq = weights * weights
    out = np.empty(len(sizes))
    start = 0
    for k, size in enumerate(sizes):
        out[k] = d / (size * n) * float(sq[:, start : start + size].sum())
        start += size
    return out


class _FreshBatches:
    """Fresh i.i.d. batches from a data law (the regime the theory covers)."""

    def __init__(self, model, rng):
        self.model = model
        self.rng = rng

    def next(self, b):
        return spectral.sample_with(self.model, b, self.rng)


class _EpochBatches:
    """Without-replacement batches with a reshuffle at every epoch boundary.

    A trailing partial batch is dropped; the reshuffle then restarts the
    epoch, keeping every step's batch size constant.
    """

    def __init__(self, data, rng):
        self.data = np.asarray(data, dtype=float)
        self.rng = rng
        self.order = rng.permutation(self.data.shape[0])
        self.pos = 0

    def next(self, b):
        if b > self.data.shape[0]:
            raise ValueError("batch_size exceeds the dataset size")
        if self.pos + b > self.order.size:
            self.order = self.rng.permutation(self.data.shape[0])
            self.pos = 0
        idx = self.order[self.pos : self.pos + b]
        self.pos += b
        return self.data[idx]


def train(weights0, cfg, data, act, mc_samples=10_000, norm_blocks=None, eval_data=None):
    """Run cfg.steps SGD updates, yielding a Checkpoint at each checkpoint.

    data is either a SpectralModel (a fresh i.i.d. batch every step) or a
    (n, d) array (epoch shuffling).  Metric evaluation uses its own random
    streams keyed by the checkpoint step, so the training trajectory is
    identical whatever checkpoints are requested.  eval_data overrides the
    source used for the reconstruction-error metric.
    """
    weights = np.array(weights0, dtype=float)
    n, d = weights.shape
    if norm_blocks is None:
        norm_blocks = (d,)
    if eval_data is None:
        eval_data = data

    if isinstance(data, spectral.SpectralModel):
        source = _FreshBatches(data, stream(cfg.seed, DATA_STREAM))
        rotation = data.rotation
    else:
        source = _EpochBatches(data, stream(cfg.seed, DATA_STREAM))
        rotation = None

    def measure(step):
        if isinstance(eval_data, spectral.SpectralModel):
            rng = stream(cfg.seed, EVAL_STREAM_BASE + step)
            risk = estimate_rec_err(weights, eval_data, act, mc_samples, rng)
        else:
            risk = dataset_rec_err(weights, eval_data, act)
        norms = subspace_norms(weights, norm_blocks, rotation)
        return Checkpoint(
            step=step,
            time=step * cfg.learning_rate,
            rec_err=risk,
            block_norms=norms,
            weights=weights,
        )

    checkpoints = set(cfg.checkpoints)
    if 0 in checkpoints:
        yield measure(0)
    for step in range(1, cfg.steps + 1):
        batch = source.next(cfg.batch_size)
        try:
            weights = sgd_step(weights, batch, cfg, act)
        except DivergenceError as err:
            raise DivergenceError(step) from err
        if step in checkpoints:
            yield measure(step)


def save_weights(path, weights):
    """Binary snapshot: magic, version u32, N u64, d u64, row-major f64 (LE)."""
    weights = np.ascontiguousarray(weights, dtype="<f8")
    n, d = weights.shape
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IQQ", SNAPSHOT_VERSION, n, d))
        fh.write(weights.tobytes())


def load_weights(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad weight-snapshot magic {blob[:4]!r}")
    version, n, d = struct.unpack_from("<IQQ", blob, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    expected = 4 + struct.calcsize("<IQQ") + 8 * n * d
    if len(blob) != expected:
        raise ValueError(f"{path}: snapshot size {len(blob)} != expected {expected}")
    data = np.frombuffer(blob, dtype="<f8", offset=4 + struct.calcsize("<IQQ"))
    return data.reshape(int(n), int(d)).copy()
