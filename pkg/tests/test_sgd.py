"""SGD engine: forward pass, gradient, metrics, training loop, snapshots."""

import math

import numpy as np
import pytest

from mfae.activations import Relu, Tanh, TanhBumps, TanhShift
from mfae.sgd import (
    Checkpoint,
    DivergenceError,
    TrainConfig,
    dataset_rec_err,
    estimate_rec_err,
    init_weights,
    load_weights,
    reconstruct,
    reconstruct_batch,
    save_weights,
    sgd_step,
    subspace_norms,
    train,
)
from mfae.spectral import make_spectral_model, sample

RELU = Relu()


def brute_force_forward(weights, x, act):
    """Independent double-loop evaluation of the autoencoder output."""
    n, d = weights.shape
    kappa = math.sqrt(d)
    out = np.zeros(d)
    for i in range(n):
        u = 0.0
        for j in range(d):
            u += kappa * weights[i, j] * x[j]
        out += kappa * weights[i] * float(act(u))
    return out / n


def batch_loss(weights, batch, l2, act):
    """Batch-averaged training loss (the quantity whose amplified gradient
    one SGD step follows)."""
    n = weights.shape[0]
    total = 0.0
    for x in batch:
        diff = reconstruct_batch(weights, x[None, :], act, canonical=False)[0] - x
        total += 0.5 * float(diff @ diff)
    total /= batch.shape[0]
    return total + l2 / n * float(np.sum(weights * weights))


def fd_gradient(weights, batch, l2, act, h=1e-6):
    """Central-difference gradient of N * batch_loss."""
    n = weights.shape[0]
    grad = np.zeros_like(weights)
    for i in range(weights.shape[0]):
        for j in range(weights.shape[1]):
            up = weights.copy()
            up[i, j] += h
            down = weights.copy()
            down[i, j] -= h
            grad[i, j] = n * (batch_loss(up, batch, l2, act) - batch_loss(down, batch, l2, act)) / (2 * h)
    return grad


class TestInitWeights:
    def test_zero_scale(self):
        np.testing.assert_array_equal(init_weights(3, 2, 0.0, seed=0), np.zeros((3, 2)))

    def test_mean_squared_norm(self):
        w = init_weights(10_000, 200, 0.2, seed=1)
        assert np.mean(np.sum(w * w, axis=1)) == pytest.approx(0.04, rel=0.02)

    def test_deterministic(self):
        np.testing.assert_array_equal(init_weights(5, 3, 0.5, seed=9), init_weights(5, 3, 0.5, seed=9))


class TestForward:
    def test_zero_weights(self):
        w = np.zeros((4, 3))
        np.testing.assert_array_equal(reconstruct(w, np.ones(3), RELU), np.zeros(3))

    def test_single_neuron_hand_value(self):
        # d=1 so kappa=1: output = theta * relu(theta * x) = 1 * relu(1) = 1
        w = np.array([[1.0]])
        assert reconstruct(w, np.array([1.0]), RELU)[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("act", [RELU, Tanh(), TanhShift(0.5), TanhBumps()])
    def test_matches_brute_force(self, act):
        rng = np.random.default_rng(42)
        w = rng.normal(size=(5, 3))
        x = rng.normal(size=3)
        np.testing.assert_allclose(reconstruct(w, x, act), brute_force_forward(w, x, act), atol=1e-12)

    def test_rotational_covariance(self):
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        w = rng.normal(size=(6, 4))
        x = rng.normal(size=4)
        left = reconstruct(w @ q.T, q @ x, RELU)
        right = q @ reconstruct(w, x, RELU)
        np.testing.assert_allclose(left, right, atol=1e-10)

    def test_permutation_is_bit_neutral(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(8, 3))
        x = rng.normal(size=3)
        perm = rng.permutation(8)
        np.testing.assert_array_equal(reconstruct(w, x, RELU), reconstruct(w[perm], x, RELU))


class TestSgdStep:
    def test_origin_is_stationary(self):
        cfg = TrainConfig(l2=0.0, learning_rate=0.1, steps=1)
        w = np.zeros((3, 2))
        batch = np.ones((4, 2))
        np.testing.assert_array_equal(sgd_step(w, batch, cfg, RELU), w)

    def test_pure_weight_decay_on_zero_data(self):
        cfg = TrainConfig(l2=0.3, learning_rate=0.05, steps=1)
        rng = np.random.default_rng(3)
        w = rng.normal(size=(4, 3))
        batch = np.zeros((2, 3))
        expected = (1.0 - 2 * 0.05 * 0.3) * w
        np.testing.assert_allclose(sgd_step(w, batch, cfg, RELU), expected, rtol=1e-14)

    def test_gradient_two_neurons(self):
        rng = np.random.default_rng(5)
        w = 0.5 * rng.normal(size=(2, 2))
        batch = rng.normal(size=(1, 2))
        assert np.abs(math.sqrt(2) * batch @ w.T).min() > 1e-3  # away from the kink
        cfg = TrainConfig(l2=0.1, learning_rate=0.01, steps=1)
        stepped = sgd_step(w, batch, cfg, RELU)
        grad = (w - stepped) / cfg.learning_rate
        np.testing.assert_allclose(grad, fd_gradient(w, batch, 0.1, RELU), rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("act", [RELU, Tanh(), TanhShift(0.5), TanhBumps()])
    @pytest.mark.parametrize("shape", [(2, 2, 1), (4, 3, 3), (3, 4, 2)])
    def test_gradient_sweep(self, act, shape):
        n, d, b = shape
        seed = hash((act.name, shape)) % 2**32
        rng = np.random.default_rng(seed)
        for trial in range(20):
            w = 0.6 * rng.normal(size=(n, d))
            batch = rng.normal(size=(b, d))
            pre = math.sqrt(d) * batch @ w.T
            if isinstance(act, Relu) and np.abs(pre).min() <= 1e-3:
                continue  # central differences straddle the kink
            l2 = 0.2 if trial % 2 else 0.0
            cfg = TrainConfig(l2=l2, learning_rate=0.01, steps=1)
            grad = (w - sgd_step(w, batch, cfg, act)) / cfg.learning_rate
            np.testing.assert_allclose(grad, fd_gradient(w, batch, l2, act), rtol=1e-5, atol=1e-7)
            break
        else:
            pytest.fail("no kink-free instance found")

    def test_divergence_guard(self):
        cfg = TrainConfig(l2=0.0, learning_rate=1e9, steps=1)
        w = np.full((2, 2), 10.0)
        batch = np.ones((1, 2))
        with pytest.raises(DivergenceError):
            sgd_step(w, batch, cfg, RELU)


class TestRecErr:
    def test_zero_weights_mean(self):
        model = make_spectral_model([1.3] * 6 + [0.1] * 14)
        est = estimate_rec_err(np.zeros((10, 20)), model, RELU, n_mc=40_000, seed=0)
        expected = 0.5 * float(np.mean(model.eigvals))
        assert abs(est.mean - expected) <= 4 * est.std_error

    def test_two_seed_consistency(self):
        rng = np.random.default_rng(13)
        w = 0.4 * rng.normal(size=(5, 3))
        model = make_spectral_model([1.0, 0.5, 0.2])
        a = estimate_rec_err(w, model, RELU, n_mc=1_000_000, seed=101)
        b = estimate_rec_err(w, model, RELU, n_mc=1_000_000, seed=202)
        joint_se = math.hypot(a.std_error, b.std_error)
        assert abs(a.mean - b.mean) <= 4 * joint_se

    def test_deterministic_and_permutation_neutral(self):
        rng = np.random.default_rng(17)
        w = rng.normal(size=(6, 4))
        model = make_spectral_model([1.0, 0.8, 0.5, 0.2])
        a = estimate_rec_err(w, model, RELU, n_mc=1000, seed=5)
        b = estimate_rec_err(w, model, RELU, n_mc=1000, seed=5)
        assert (a.mean, a.std_error) == (b.mean, b.std_error)
        perm = rng.permutation(6)
        c = estimate_rec_err(w[perm], model, RELU, n_mc=1000, seed=5)
        assert (a.mean, a.std_error) == (c.mean, c.std_error)

    def test_requires_two_samples(self):
        with pytest.raises(ValueError):
            estimate_rec_err(np.zeros((2, 2)), make_spectral_model([1.0, 1.0]), RELU, 1, 0)


class TestSubspaceNorms:
    def test_zero_weights(self):
        np.testing.assert_array_equal(subspace_norms(np.zeros((5, 4)), (2, 2)), [0.0, 0.0])

    def test_first_basis_vector(self):
        d = 6
        w = np.zeros((3, d))
        w[:, 0] = 1.0
        np.testing.assert_allclose(subspace_norms(w, (1, d - 1)), [d, 0.0])

    def test_partition_validation(self):
        with pytest.raises(ValueError):
            subspace_norms(np.zeros((2, 4)), (2, 3))
        with pytest.raises(ValueError):
            subspace_norms(np.zeros((2, 4)), (4, 0))

    def test_rotation_argument(self):
        rng = np.random.default_rng(23)
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        w = rng.normal(size=(10, 4))
        rotated = w @ q.T  # rows live in the rotated frame
        np.testing.assert_allclose(
            subspace_norms(rotated, (2, 2), rotation=q), subspace_norms(w, (2, 2)), atol=1e-12
        )


class TestTrain:
    def _model(self):
        return make_spectral_model([1.3] * 4 + [0.1] * 4)

    def test_zero_steps_emits_initial_checkpoint(self):
        model = self._model()
        cfg = TrainConfig(steps=0, checkpoints=(0,), seed=1)
        w0 = init_weights(20, model.dim, cfg.r0, cfg.seed)
        records = list(train(w0, cfg, model, RELU, mc_samples=500))
        assert len(records) == 1 and records[0].step == 0
        np.testing.assert_array_equal(records[0].weights, w0)

    def test_metric_stream_deterministic(self):
        model = self._model()
        cfg = TrainConfig(steps=20, checkpoints=(0, 10, 20), seed=3, batch_size=8)
        w0 = init_weights(15, model.dim, cfg.r0, cfg.seed)
        first = [(c.step, c.rec_err.mean, tuple(c.block_norms)) for c in train(w0, cfg, model, RELU, mc_samples=400)]
        second = [(c.step, c.rec_err.mean, tuple(c.block_norms)) for c in train(w0, cfg, model, RELU, mc_samples=400)]
        assert first == second

    def test_checkpoint_schedule_does_not_perturb_trajectory(self):
        model = self._model()
        w0 = init_weights(15, model.dim, 0.2, 3)
        sparse = TrainConfig(steps=20, checkpoints=(0, 20), seed=3, batch_size=8)
        dense = TrainConfig(steps=20, checkpoints=(0, 5, 10, 20), seed=3, batch_size=8)
        last_sparse = list(train(w0, sparse, model, RELU, mc_samples=400))[-1]
        last_dense = list(train(w0, dense, model, RELU, mc_samples=400))[-1]
        assert last_sparse.rec_err == last_dense.rec_err
        np.testing.assert_array_equal(last_sparse.weights, last_dense.weights)

    def test_unregularized_risk_nonincreasing(self):
        # near-population batches approximate the gradient flow, under which
        # the unregularized reconstruction error cannot increase
        model = self._model()
        cfg = TrainConfig(
            l2=0.0, learning_rate=0.05, batch_size=10_000, steps=60, r0=0.3,
            seed=5, checkpoints=tuple(range(0, 61, 10)),
        )
        w0 = init_weights(100, model.dim, cfg.r0, cfg.seed)
        records = list(train(w0, cfg, model, RELU, mc_samples=20_000))
        for prev, cur in zip(records, records[1:]):
            slack = 3 * math.hypot(prev.rec_err.std_error, cur.rec_err.std_error)
            assert cur.rec_err.mean <= prev.rec_err.mean + slack

    def test_epoch_mode_runs_and_is_deterministic(self):
        model = self._model()
        data = sample(model, 64, seed=2)
        cfg = TrainConfig(steps=10, checkpoints=(10,), seed=4, batch_size=16)
        w0 = init_weights(12, model.dim, cfg.r0, cfg.seed)
        a = list(train(w0, cfg, data, RELU))[-1]
        b = list(train(w0, cfg, data, RELU))[-1]
        assert a.rec_err == b.rec_err
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_divergence_reports_step(self):
        model = self._model()
        cfg = TrainConfig(learning_rate=50.0, steps=500, checkpoints=(500,), seed=6, batch_size=4, r0=2.0)
        w0 = init_weights(10, model.dim, cfg.r0, cfg.seed)
        with pytest.raises(DivergenceError) as excinfo:
            list(train(w0, cfg, model, RELU))
        assert excinfo.value.step is not None and 1 <= excinfo.value.step <= 500


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(31)
        w = rng.normal(size=(7, 3))
        path = tmp_path / "weights.bin"
        save_weights(path, w)
        np.testing.assert_array_equal(load_weights(path), w)

    def test_header_contents(self, tmp_path):
        path = tmp_path / "weights.bin"
        save_weights(path, np.zeros((2, 5)))
        blob = path.read_bytes()
        assert blob[:4] == b"MFAE"
        assert len(blob) == 4 + 4 + 8 + 8 + 2 * 5 * 8

    def test_rejects_corruption(self, tmp_path):
        path = tmp_path / "weights.bin"
        save_weights(path, np.zeros((2, 2)))
        blob = path.read_bytes()
        (tmp_path / "bad_magic.bin").write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(ValueError, match="magic"):
            load_weights(tmp_path / "bad_magic.bin")
        (tmp_path / "short.bin").write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="size"):
            load_weights(tmp_path / "short.bin")


class TestConfigValidation:
    def test_checkpoint_bounds(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=10, checkpoints=(0, 11))
        with pytest.raises(ValueError):
            TrainConfig(steps=10, checkpoints=(5, 5))

    def test_parameter_signs(self):
        with pytest.raises(ValueError):
            TrainConfig(l2=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(r0=-1.0)
