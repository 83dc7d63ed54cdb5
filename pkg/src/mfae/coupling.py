"""Empirical propagation-of-chaos checks for the ReLU setting.

A coupled run trains SGD particles and evolves each particle's closed-form
limit trajectory from the shared initialization, recording

    E_k = (1/N) sum_i || theta_i^k - thetabar_i^{k*eps} ||^2

at the requested checkpoints.  A scaling study sweeps N and the learning
rate and fits log-log slopes of the median terminal error.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import relu_mf, sgd
from .activations import Relu
from .rng import DATA_STREAM, stream
from .spectral import SpectralModel, sample_with

__all__ = ["CouplingReport", "ScalingStudy", "coupled_run", "scaling_study", "limit_expectation"]


@dataclass(frozen=True)
class CouplingReport:
    """Coupling error time series for one run."""

    steps: np.ndarray
    times: np.ndarray
    errors: np.ndarray
    n_neurons: int
    dim: int
    l2: float
    learning_rate: float
    r0: float
    seed: int
    final_weights: np.ndarray


@dataclass(frozen=True)
class ScalingStudy:
    """Median terminal errors per swept axis value, with log-log slopes."""

    rows: list  # (axis, value, median_terminal_error)
    slopes: dict  # axis -> fitted slope
    reports: list  # every CouplingReport behind the medians


def coupled_run(model, n_neurons, cfg, act=None):
    """Train SGD and its coupled limit trajectories from one initialization.

    The limit trajectory of every particle is the closed-form rescaling map
    applied to its initial value, so no ODE solve is needed.  The theory
    this verifies is stated for ReLU and per-sample SGD; other activations
    are rejected, larger batches are allowed but change the noise scale.
    """
    act = act or Relu()
    if not isinstance(act, Relu):
        raise ValueError("coupled runs are defined for the ReLU activation only")
    if not isinstance(model, SpectralModel):
        raise ValueError("coupled runs need a SpectralModel data law")

    weights0 = sgd.init_weights(n_neurons, model.dim, cfg.r0, cfg.seed)
    weights = weights0.copy()
    data = stream(cfg.seed, DATA_STREAM)

    steps, times, errors = [], [], []

    def record(step):
        t = step * cfg.learning_rate
        limit = relu_mf.mf_particles(weights0, model, cfg.l2, cfg.r0, t)
        gap = weights - limit
        steps.append(step)
        times.append(t)
        errors.append(float(np.mean(np.sum(gap * gap, axis=1))))

    checkpoints = set(cfg.checkpoints)
    if 0 in checkpoints:
        record(0)
    for step in range(1, cfg.steps + 1):
        batch = sample_with(model, cfg.batch_size, data)
        try:
            weights = sgd.sgd_step(weights, batch, cfg, act)
        except sgd.DivergenceError as err:
            raise sgd.DivergenceError(step) from err
        if step in checkpoints:
            record(step)

    return CouplingReport(
        steps=np.asarray(steps),
        times=np.asarray(times),
        errors=np.asarray(errors),
        n_neurons=n_neurons,
        dim=model.dim,
        l2=cfg.l2,
        learning_rate=cfg.learning_rate,
        r0=cfg.r0,
        seed=cfg.seed,
        final_weights=weights,
    )


def _run_once(model, n_neurons, eps, horizon, l2, r0, batch_size, seed, checkpoints):
    steps = max(1, round(horizon / eps))
    if checkpoints is None:
        cps = (0, steps)
    else:
        cps = tuple(c for c in checkpoints if c <= steps)
        if not cps or cps[-1] != steps:
            cps = cps + (steps,)
    cfg = sgd.TrainConfig(
        l2=l2,
        learning_rate=eps,
        batch_size=batch_size,
        steps=steps,
        r0=r0,
        seed=seed,
        checkpoints=cps,
    )
    return coupled_run(model, n_neurons, cfg)


def scaling_study(
    model,
    n_list,
    eps_list,
    horizon,
    seeds,
    l2=0.0,
    r0=0.2,
    batch_size=1,
    checkpoints=None,
):
    """Sweep N and/or the learning rate; fit slopes of the median error.

    Each swept axis needs at least three values (an axis may instead be
    pinned to a single value) and at least three seeds; the other axis is
    held at its most favorable value (largest N, smallest learning rate).
    Medians are used because rare large pre-activations make the error
    heavy-tailed.
    """
    n_list = sorted(int(n) for n in n_list)
    eps_list = sorted(float(e) for e in eps_list)
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError("need >= 3 seeds")
    for name, axis in (("n_list", n_list), ("eps_list", eps_list)):
        if len(axis) not in (1,) and len(axis) < 3:
            raise ValueError(f"{name} must have one (pinned) or >= 3 (swept) values")
    if len(n_list) < 3 and len(eps_list) < 3:
        raise ValueError("at least one axis must be swept with >= 3 values")

    rows = []
    slopes = {}
    reports = []

    def sweep(axis_name, values, runner):
        medians = []
        for value in values:
            errs = []
            for seed in seeds:
                report = runner(value, seed)
                reports.append(report)
                errs.append(float(report.errors[-1]))
            med = float(np.median(errs))
            rows.append((axis_name, value, med))
            medians.append(med)
        if len(values) >= 3:
            slope, _ = np.polyfit(np.log(values), np.log(medians), 1)
            slopes[axis_name] = float(slope)

    if len(n_list) >= 3:
        eps = eps_list[0]
        sweep(
            "n_neurons",
            n_list,
            lambda n, s: _run_once(model, n, eps, horizon, l2, r0, batch_size, s, checkpoints),
        )
    if len(eps_list) >= 3:
        n = n_list[-1]
        sweep(
            "learning_rate",
            eps_list,
            lambda e, s: _run_once(model, n, e, horizon, l2, r0, batch_size, s, checkpoints),
        )
    return ScalingStudy(rows=rows, slopes=slopes, reports=reports)


def limit_expectation(model, l2, r0, t, phi, n_mc, seed):
    """Monte-Carlo E[phi(theta)] under the Gaussian limit law at time t.

    phi maps an (n, d) stack of particles to n scalars.  Used for the
    Lipschitz-test-function checks, where no closed form is available for
    general phi.
    """
    rng = stream(seed)
    scale = relu_mf.rescale_factor(model.eigvals, l2, r0, t) / math.sqrt(model.dim)
    z = rng.standard_normal((n_mc, model.dim)) * scale
    if model.rotation is not None:
        z = z @ model.rotation.T
    return float(np.mean(phi(z)))
