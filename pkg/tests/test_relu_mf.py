"""Closed-form ReLU theory: factors vs an RK4 oracle, risks, particle map."""

import math

import numpy as np
import pytest

from mfae.relu_mf import (
    block_norm_prediction,
    mf_particles,
    rescale_factor,
    rescale_ode_rhs,
    risk,
    two_stage_risk,
)
from mfae.spectral import make_spectral_model

ROOT2 = math.sqrt(2.0)


def rk4_oracle(sigma_sq, l2, r0, t_points, h=1e-5):
    """Fixed-step RK4 of the scalar flow, recording r at the given times.

    Vectorized over parameter tuples: sigma_sq, l2, r0 are equal-length
    arrays integrated side by side (plain floats when there is only one,
    where numpy call overhead would dominate).
    """
    sigma_sq = np.asarray(sigma_sq, float)
    l2 = np.asarray(l2, float)
    r = np.asarray(r0, float).copy()
    t_points = list(t_points)
    out = np.empty((len(t_points), r.size))
    scalar = r.size == 1
    if scalar:
        s_f, l_f, r_f = float(sigma_sq[0]), float(l2[0]), float(r[0])

        def rhs(v):
            return -v * (0.5 * s_f * v * v - s_f + 2.0 * l_f)

    t = 0.0
    for row, t_next in enumerate(t_points):
        n_sub = max(0, round((t_next - t) / h))
        if scalar:
            for _ in range(n_sub):
                k1 = rhs(r_f)
                k2 = rhs(r_f + 0.5 * h * k1)
                k3 = rhs(r_f + 0.5 * h * k2)
                k4 = rhs(r_f + h * k3)
                r_f += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            out[row] = r_f
        else:
            for _ in range(n_sub):
                k1 = rescale_ode_rhs(r, sigma_sq, l2)
                k2 = rescale_ode_rhs(r + 0.5 * h * k1, sigma_sq, l2)
                k3 = rescale_ode_rhs(r + 0.5 * h * k2, sigma_sq, l2)
                k4 = rescale_ode_rhs(r + h * k3, sigma_sq, l2)
                r = r + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            out[row] = r
        t += n_sub * h
    return out


class TestRescaleFactor:
    def test_fixed_point(self):
        for sigma_sq in (0.1, 1.3, 2.0):
            for t in (0.0, 0.7, 50.0):
                assert rescale_factor(sigma_sq, 0.0, ROOT2, t) == pytest.approx(ROOT2, rel=1e-14)

    def test_origin_stationary(self):
        assert rescale_factor(1.3, 0.0, 0.0, 5.0) == 0.0

    def test_initial_condition(self):
        assert rescale_factor(0.7, 0.2, 1.1, 0.0) == pytest.approx(1.1, rel=1e-15)

    def test_matches_rk4_oracle_single(self):
        got = rescale_factor(1.3, 0.0, 0.2, 5.0)
        oracle = rk4_oracle(np.array([1.3]), np.array([0.0]), np.array([0.2]), [5.0])[0, 0]
        assert got == pytest.approx(oracle, abs=1e-8)

    def test_matches_rk4_oracle_grid(self):
        # smaller sibling of the acceptance-gate grid, kink cases included
        sigma_sq = [0.3, 1.0, 2.0]
        l2 = [0.0, 0.25, 0.5]
        r0 = [0.2, ROOT2, 2.2]
        t_points = [0.05, 0.5, 1.5]
        combos = [(s, l, r) for s in sigma_sq for l in l2 for r in r0]
        s_arr = np.array([c[0] for c in combos])
        l_arr = np.array([c[1] for c in combos])
        r_arr = np.array([c[2] for c in combos])
        oracle = rk4_oracle(s_arr, l_arr, r_arr, t_points)
        for row, t in enumerate(t_points):
            got = np.array(
                [rescale_factor(s, l, r, t) for s, l, r in combos]
            )
            np.testing.assert_allclose(got, oracle[row], atol=1e-8)

    def test_large_time_limits(self):
        # selected: r -> sqrt(2 (1 - 2 l2 / S2)); eliminated: r -> 0
        assert rescale_factor(1.5, 0.4, 2.2, 1e3) == pytest.approx(
            math.sqrt(2 * (1 - 0.8 / 1.5)), abs=1e-9
        )
        assert rescale_factor(1.3, 0.0, 0.2, 1e3) == pytest.approx(ROOT2, abs=1e-9)
        assert rescale_factor(0.1, 0.4, 2.2, 1e3) < 1e-6

    def test_critical_point_power_law(self):
        # at S2 = 2*l2 the factor decays like r0^2/(1 + r0^2 S2 t)
        sigma_sq, l2, r0 = 1.0, 0.5, 0.7
        for t in (0.0, 1.0, 100.0, 1e3):
            expected = math.sqrt(r0**2 / (1 + r0**2 * sigma_sq * t))
            assert rescale_factor(sigma_sq, l2, r0, t) == pytest.approx(expected, rel=1e-12)
        assert rescale_factor(sigma_sq, l2, r0, 1e3) < 0.05

    def test_continuity_across_critical_band(self):
        sigma_sq, r0, t = 1.0, 0.9, 2.0
        center = rescale_factor(sigma_sq, sigma_sq / 2, r0, t)
        for eta in (1e-8, -1e-8):
            l2 = (sigma_sq - eta) / 2
            assert abs(rescale_factor(sigma_sq, l2, r0, t) - center) < 1e-7

    def test_monotone_trichotomy(self):
        t_grid = np.linspace(0.0, 12.0, 400)
        cases = [
            (1.3, 0.0, 0.2, 1),   # r0^2 < 2 eta / S2: increasing
            (1.3, 0.0, 2.0, -1),  # above the plateau: decreasing
            (0.5, 0.4, 1.0, -1),  # eliminated block: decreasing
            (1.0, 0.5, 0.8, -1),  # critical: decreasing (power law)
        ]
        for sigma_sq, l2, r0, sign in cases:
            r = rescale_factor(sigma_sq, l2, r0, t_grid)
            diffs = np.diff(r)
            assert np.all(sign * diffs > 0), (sigma_sq, l2, r0)

    def test_closed_form_solves_ode(self):
        h = 1e-5
        for sigma_sq in (0.3, 1.0, 1.5):
            for l2 in (0.0, 0.2, 0.5):
                for r0 in (0.2, 1.0, 2.2):
                    for t in (0.1, 1.0, 4.0):
                        r_plus = rescale_factor(sigma_sq, l2, r0, t + h)
                        r_minus = rescale_factor(sigma_sq, l2, r0, t - h)
                        drdt = (r_plus - r_minus) / (2 * h)
                        r = rescale_factor(sigma_sq, l2, r0, t)
                        residual = drdt - rescale_ode_rhs(r, sigma_sq, l2)
                        assert abs(residual) < 1e-6

    def test_bounded_by_max_of_r0_and_root2(self):
        t_grid = np.linspace(0, 30, 200)
        for sigma_sq, l2, r0 in [(1.3, 0.0, 0.2), (1.5, 0.4, 2.2), (1.0, 0.5, 0.7)]:
            r = rescale_factor(sigma_sq, l2, r0, t_grid)
            assert np.all(r <= max(r0, ROOT2) + 1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            rescale_factor(-1.0, 0.0, 0.2, 1.0)
        with pytest.raises(ValueError):
            rescale_factor(1.0, 0.0, -0.2, 1.0)
        with pytest.raises(ValueError):
            rescale_factor(1.0, 0.0, 0.2, -1.0)


FIG2_MODEL = make_spectral_model([1.5] * 50 + [0.1] * 450)


class TestRisk:
    def test_zero_at_full_reconstruction(self):
        model = make_spectral_model([1.3] * 3 + [0.4] * 5)
        assert risk(model, 0.0, ROOT2, 10.0) == pytest.approx(0.0, abs=1e-12)

    def test_initial_value(self):
        model = make_spectral_model([1.3, 0.1])
        r0 = 0.5
        expected = (1.3 * (1 - r0**2 / 2) ** 2 + 0.1 * (1 - r0**2 / 2) ** 2) / 4
        assert risk(model, 0.7, r0, 0.0) == pytest.approx(expected, rel=1e-12)

    def test_regularized_limit(self):
        # kept block shrinks to 2(1 - 2l/S2); eliminated block contributes
        # its full variance share 0.5 * 0.9 * 0.1
        value = risk(FIG2_MODEL, 0.4, 2.2, 1e3)
        kept = 50 * 1.5 * (0.8 / 1.5) ** 2
        eliminated = 450 * 0.1
        assert value == pytest.approx((kept + eliminated) / 1000, rel=1e-9)
        assert eliminated / 1000 == pytest.approx(0.5 * 0.9 * 0.1)


class TestParticleMap:
    def test_identity_at_time_zero(self):
        model = make_spectral_model([1.3, 0.1])
        theta = np.array([0.4, -0.2])
        np.testing.assert_array_equal(mf_particles(theta, model, 0.0, 0.5, 0.0), theta)

    def test_fixed_point_keeps_particles(self):
        model = make_spectral_model([1.3, 0.1])
        theta = np.array([[0.4, -0.2], [0.1, 0.3]])
        np.testing.assert_allclose(
            mf_particles(theta, model, 0.0, ROOT2, 3.0), theta, rtol=1e-12
        )

    def test_diagonal_componentwise(self):
        model = make_spectral_model([1.3, 0.4])
        theta = np.array([0.5, -1.0])
        t, r0 = 1.0, 0.3
        expected = theta * [
            rescale_factor(1.3, 0.1, r0, t) / r0,
            rescale_factor(0.4, 0.1, r0, t) / r0,
        ]
        np.testing.assert_allclose(mf_particles(theta, model, 0.1, r0, t), expected, atol=1e-12)

    def test_zero_r0_convention(self):
        model = make_spectral_model([1.3, 0.4])
        theta = np.array([0.5, -1.0])
        np.testing.assert_array_equal(mf_particles(theta, model, 0.1, 0.0, 2.0), theta)

    def test_rotated_model(self):
        angle = 0.6
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        model = make_spectral_model([1.3, 0.4], rotation=rot)
        plain = make_spectral_model([1.3, 0.4])
        rng = np.random.default_rng(2)
        theta = rng.normal(size=(5, 2))
        got = mf_particles(theta, model, 0.1, 0.3, 1.0)
        expected = mf_particles(theta @ rot, plain, 0.1, 0.3, 1.0) @ rot.T
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestBlockNorms:
    def test_unregularized_limit_is_two(self):
        model = make_spectral_model([1.3] * 6 + [0.1] * 14)
        np.testing.assert_allclose(
            block_norm_prediction(model, 0.0, 0.2, 1e3, (6, 14)), [2.0, 2.0], atol=1e-8
        )

    def test_initial_value(self):
        model = make_spectral_model([1.3] * 6 + [0.1] * 14)
        np.testing.assert_allclose(
            block_norm_prediction(model, 0.0, 0.2, 0.0, (6, 14)), [0.04, 0.04], rtol=1e-12
        )

    def test_regularized_limits(self):
        got = block_norm_prediction(FIG2_MODEL, 0.4, 2.2, 1e3, (50, 450))
        np.testing.assert_allclose(got, [2 * (1 - 0.8 / 1.5), 0.0], atol=1e-8)

    def test_partition_validation(self):
        with pytest.raises(ValueError):
            block_norm_prediction(FIG2_MODEL, 0.4, 2.2, 1.0, (50, 400))


class TestTwoStageRisk:
    def test_infinite_mu_recovers_risk(self):
        value = two_stage_risk(FIG2_MODEL, 0.4, 2.2, 2.0, mu=1e12)
        assert value == pytest.approx(risk(FIG2_MODEL, 0.4, 2.2, 2.0), rel=1e-9)

    def test_sampling_term_at_full_reconstruction(self):
        # with every factor at sqrt(2) the sampling term is sum(S2)/(mu*d)
        model = make_spectral_model([1.3] * 4 + [0.2] * 4)
        mu = 0.7
        total = two_stage_risk(model, 0.0, ROOT2, 3.0, mu)
        training = risk(model, 0.0, ROOT2, 3.0)
        expected = float(np.sum(model.eigvals)) / (mu * model.dim)
        assert total - training == pytest.approx(expected, rel=1e-9)

    def test_figure_five_sampling_share(self):
        # at M = 200 of d = 500 the sampling loss is a small share of the
        # total (the paper calls it negligible; the exact share is ~11%)
        mu = 200 / 500
        total = two_stage_risk(FIG2_MODEL, 0.4, 2.2, 1e3, mu)
        training = risk(FIG2_MODEL, 0.4, 2.2, 1e3)
        share = (total - training) / total
        assert share < 0.12

    def test_sampling_term_convex_decreasing_in_mu(self):
        mus = np.geomspace(0.1, 10, 12)
        sampling = np.array(
            [two_stage_risk(FIG2_MODEL, 0.4, 2.2, 5.0, m) - risk(FIG2_MODEL, 0.4, 2.2, 5.0) for m in mus]
        )
        first = np.diff(sampling)
        assert np.all(first < 0)
        assert np.all(np.diff(first) > 0)

    def test_rejects_bad_mu(self):
        with pytest.raises(ValueError):
            two_stage_risk(FIG2_MODEL, 0.4, 2.2, 1.0, mu=0.0)
