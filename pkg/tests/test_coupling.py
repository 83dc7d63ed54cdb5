"""Coupling of SGD particles to their closed-form limit trajectories."""

import numpy as np
import pytest

from mfae.activations import Relu, Tanh
from mfae.coupling import coupled_run, limit_expectation, scaling_study
from mfae.relu_mf import risk as predicted_risk
from mfae.sgd import TrainConfig, estimate_rec_err
from mfae.spectral import make_spectral_model

MODEL = make_spectral_model([1.3] * 6 + [0.1] * 14)  # d = 20


def run_cfg(eps, steps, seed, batch_size=1, checkpoints=None):
    return TrainConfig(
        l2=0.0,
        learning_rate=eps,
        batch_size=batch_size,
        steps=steps,
        r0=0.2,
        seed=seed,
        checkpoints=checkpoints or (0, steps),
    )


class TestCoupledRun:
    def test_error_starts_at_zero_exactly(self):
        report = coupled_run(MODEL, 100, run_cfg(1e-2, 10, seed=0))
        assert report.errors[0] == 0.0
        assert np.all(report.errors >= 0.0)

    def test_relu_only(self):
        with pytest.raises(ValueError):
            coupled_run(MODEL, 10, run_cfg(1e-2, 5, seed=0), act=Tanh())

    def test_deterministic(self):
        a = coupled_run(MODEL, 50, run_cfg(1e-2, 50, seed=4))
        b = coupled_run(MODEL, 50, run_cfg(1e-2, 50, seed=4))
        np.testing.assert_array_equal(a.errors, b.errors)
        np.testing.assert_array_equal(a.final_weights, b.final_weights)

    def test_smaller_learning_rate_couples_tighter(self):
        # same horizon T = 1 with eps = 1e-2 vs 1e-3 at N = 2000
        coarse = coupled_run(MODEL, 2000, run_cfg(1e-2, 100, seed=1))
        fine = coupled_run(MODEL, 2000, run_cfg(1e-3, 1000, seed=1))
        assert fine.errors[-1] < coarse.errors[-1]

    def test_larger_ensemble_couples_tighter(self):
        small = coupled_run(MODEL, 250, run_cfg(1e-3, 1000, seed=2, batch_size=400))
        large = coupled_run(MODEL, 1000, run_cfg(1e-3, 1000, seed=2, batch_size=400))
        assert large.errors[-1] < small.errors[-1]


@pytest.mark.slow
class TestEnsembleLimits:
    """Particle averages and risks approach their limit-law values with N."""

    @pytest.fixture(scope="class")
    def runs(self):
        cfg = lambda seed: run_cfg(1e-3, 1000, seed=seed, batch_size=400)
        return {n: coupled_run(MODEL, n, cfg(3)) for n in (250, 4000)}

    def test_lipschitz_averages_approach_limit(self, runs):
        for phi, tag in [
            (lambda w: np.linalg.norm(w, axis=1), "norm"),
            (lambda w: w[:, 0], "first_coordinate"),
        ]:
            gaps = {}
            for n, report in runs.items():
                limit = limit_expectation(MODEL, 0.0, 0.2, 1.0, phi, n_mc=1_000_000, seed=11)
                gaps[n] = abs(float(np.mean(phi(report.final_weights))) - limit)
            assert gaps[4000] < gaps[250], tag

    def test_risk_transfer(self, runs):
        pred = predicted_risk(MODEL, 0.0, 0.2, 1.0)
        gaps = {
            n: abs(estimate_rec_err(r.final_weights, MODEL, Relu(), 40_000, seed=13).mean - pred)
            for n, r in runs.items()
        }
        assert gaps[4000] < gaps[250]


class TestScalingStudy:
    def test_rejects_underspecified_sweeps(self):
        with pytest.raises(ValueError):
            scaling_study(MODEL, [100], [1e-3], 0.1, seeds=[0, 1, 2])
        with pytest.raises(ValueError):
            scaling_study(MODEL, [100, 200, 400], [1e-3], 0.1, seeds=[0, 1])
        with pytest.raises(ValueError):
            scaling_study(MODEL, [100, 200], [1e-3], 0.1, seeds=[0, 1, 2])

    def test_deterministic_table(self):
        kwargs = dict(horizon=0.05, seeds=[0, 1, 2], r0=0.2, batch_size=4)
        a = scaling_study(MODEL, [50, 100, 200], [1e-3], **kwargs)
        b = scaling_study(MODEL, [50, 100, 200], [1e-3], **kwargs)
        assert a.rows == b.rows
        assert a.slopes == b.slopes

    def test_sweeps_both_axes(self):
        study = scaling_study(
            MODEL, [16, 32, 64], [2e-3, 4e-3, 8e-3], horizon=0.05, seeds=[0, 1, 2], batch_size=4
        )
        assert set(study.slopes) == {"n_neurons", "learning_rate"}
        axes = {axis for axis, _, _ in study.rows}
        assert axes == {"n_neurons", "learning_rate"}
