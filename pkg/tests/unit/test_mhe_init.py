import unittest

import numpy as np
from numpy.testing import assert_allclose
from pydantic import ValidationError

from metamorphic_mhe.bench.scenarios import VEHICLE_GAIN, vehicle_plant
from metamorphic_mhe.bench.simulation import simulate
from metamorphic_mhe.errors import ConfigError, DimensionError, NotSchurError
from metamorphic_mhe.estimation.mhe_init import (
    InitialStateMhe,
    InitMheConfig,
    analysis_table,
    bound_sequence,
    build_batch_maps,
    decay_monotonicity_report,
    error_dynamics,
    lyapunov_weight,
    noise_bound,
    prior_update,
    solve_initial_state,
    weight_ratio,
)
from metamorphic_mhe.models.system_types import Box, LinearPlant
from metamorphic_mhe.utils.linalg import spectral_radius

W_BOX = Box.symmetric(0.1 * np.ones(4))
V_BOX = Box.symmetric(0.25 * np.ones(3))


def vehicle_config(lam=0.5, horizon=5, **overrides):
    fields = dict(
        plant=vehicle_plant(), L=VEHICLE_GAIN, horizon=horizon, lam=lam, mu=0.15, mu_bar=0.1
    )
    fields.update(overrides)
    return InitMheConfig(**fields)


def run_estimator(config, log, x_bar0):
    """Errors x_{t-N} - xhat_{t-N} keyed by window start."""
    est = InitialStateMhe(config, x_bar0)
    errors = {}
    for t in range(log.length):
        out = est.step(log.outputs[t])
        if out is not None:
            errors[t - config.horizon] = log.states[t - config.horizon] - out
    return errors


class TestBatchMaps(unittest.TestCase):
    def test_shapes(self):
        maps = build_batch_maps(vehicle_plant(), VEHICLE_GAIN, 5)
        self.assertEqual(maps.Lambda.shape, (18, 4))
        self.assertEqual(maps.Lambda_bar.shape, (18, 4))
        self.assertEqual(maps.Phi_w.shape, (18, 20))
        self.assertEqual(maps.Phi_w_bar.shape, (18, 20))
        self.assertEqual(maps.Psi.shape, (18, 18))

    def test_psi_is_identity_minus_observer_map(self):
        maps = build_batch_maps(vehicle_plant(), VEHICLE_GAIN, 4)
        assert_allclose(maps.Psi + maps.L_N, np.eye(15))
        assert_allclose(maps.L_N[:3], np.zeros((3, 15)))

    def test_predicted_outputs(self):
        # yhat-stack of the in-window observer equals Lambda_bar x + L_N y
        plant = vehicle_plant()
        maps = build_batch_maps(plant, VEHICLE_GAIN, 4)
        rng = np.random.Generator(np.random.Philox(1))
        x0 = rng.standard_normal(4)
        ys = rng.standard_normal((5, 3))
        x, yhat = x0, []
        for k in range(5):
            yhat.append(plant.C @ x)
            x = prior_update(x, None, ys[k], plant, VEHICLE_GAIN)
        assert_allclose(np.concatenate(yhat), maps.Lambda_bar @ x0 + maps.L_N @ ys.ravel(), atol=1e-12)


class TestWeightRatio(unittest.TestCase):
    def test_cases(self):
        self.assertEqual(weight_ratio(0.5, 0.6, 0.4).case, "i")
        self.assertAlmostEqual(weight_ratio(0.5, 0.6, 0.4).ratio, 1.0)
        self.assertEqual(weight_ratio(0.5, 0.15, 0.9).case, "ii")
        self.assertGreater(weight_ratio(0.5, 0.15, 0.9).ratio, 1.0)
        self.assertEqual(weight_ratio(0.5, 0.15, 0.1).case, "iii")
        self.assertLess(weight_ratio(0.5, 0.15, 0.1).ratio, 1.0)

    def test_no_case_for_equal_weights(self):
        self.assertIsNone(weight_ratio(0.5, 0.3, 0.3).case)

    def test_derivative(self):
        self.assertAlmostEqual(weight_ratio(0.5, 0.15, 0.1).d_ratio, -0.4)

    def test_lambda_zero(self):
        with self.assertRaises(ConfigError):
            weight_ratio(0.0, 0.15, 0.1)


class TestInitMheConfig(unittest.TestCase):
    def test_horizon_shorter_than_state(self):
        with self.assertRaises(ValidationError) as ctx:
            vehicle_config(horizon=3)
        self.assertIn("shorter than the state dimension 4", str(ctx.exception))

    def test_gain_shape(self):
        with self.assertRaises(ValidationError) as ctx:
            vehicle_config(L=np.zeros((3, 4)))
        self.assertIn("L must be 4x3", str(ctx.exception))

    def test_zero_weights(self):
        with self.assertRaises(ValidationError) as ctx:
            vehicle_config(mu=0.0, mu_bar=0.0)
        self.assertIn("cannot both be zero", str(ctx.exception))

    def test_lambda_one_uses_mu(self):
        self.assertAlmostEqual(vehicle_config(lam=1.0).ratio, 0.15)


class TestSolveInitialState(unittest.TestCase):
    def setUp(self):
        rng = np.random.Generator(np.random.Philox(2))
        self.y = rng.standard_normal(18)
        self.prior = rng.standard_normal(4)

    def test_lambda_zero_returns_prior(self):
        config = vehicle_config(lam=0.0)
        xhat = solve_initial_state(self.y, None, self.prior, config.maps, config)
        assert_allclose(xhat, self.prior)

    def test_vanishing_lambda_returns_prior(self):
        config = vehicle_config(lam=1e-8)
        xhat = solve_initial_state(self.y, None, self.prior, config.maps, config)
        assert_allclose(xhat, self.prior, atol=1e-4)

    def test_closed_form_matches_qp(self):
        free = vehicle_config()
        boxed = vehicle_config(state_box=Box.symmetric(1e3 * np.ones(4)))
        closed = solve_initial_state(self.y, None, self.prior, free.maps, free)
        qp = solve_initial_state(self.y, None, self.prior, boxed.maps, boxed)
        assert_allclose(qp, closed, atol=1e-6)

    def test_closed_form_is_stationary(self):
        config = vehicle_config()
        maps = config.maps
        xhat = solve_initial_state(self.y, None, self.prior, maps, config)
        grad = config.ratio * (xhat - self.prior) - maps.Lambda_bar.T @ (
            maps.Psi @ self.y - maps.Lambda_bar @ xhat
        )
        assert_allclose(grad, np.zeros(4), atol=1e-9)

    def test_box_is_respected(self):
        config = vehicle_config(state_box=Box.symmetric(0.01 * np.ones(4)))
        xhat = solve_initial_state(100.0 * self.y, None, self.prior, config.maps, config)
        self.assertTrue(np.all(np.abs(xhat) <= 0.01 + 1e-9))

    def test_stack_size_checked(self):
        config = vehicle_config()
        with self.assertRaises(DimensionError):
            solve_initial_state(self.y[:-1], None, self.prior, config.maps, config)


class TestInitialStateMhe(unittest.TestCase):
    def test_noise_free_with_exact_prior(self):
        config = vehicle_config()
        x0 = np.array([1.0, -2.0, 0.5, 3.0])
        log = simulate(config.plant, Box.zero(4), Box.zero(3), 30, seed=3, x0=x0)
        errors = run_estimator(config, log, x_bar0=x0)
        self.assertEqual(len(errors), 30 - config.horizon)
        for e in errors.values():
            self.assertLessEqual(np.max(np.abs(e)), 1e-8)

    def test_no_estimate_before_window_fills(self):
        config = vehicle_config()
        est = InitialStateMhe(config, np.zeros(4))
        for _ in range(config.horizon):
            self.assertIsNone(est.step(np.zeros(3)))
        with self.assertRaises(ConfigError):
            est.current_estimate()
        self.assertIsNotNone(est.step(np.zeros(3)))
        self.assertEqual(est.window_start, 0)

    def test_current_estimate_noise_free(self):
        config = vehicle_config()
        x0 = np.array([1.0, 1.0, 1.0, 1.0])
        log = simulate(config.plant, Box.zero(4), Box.zero(3), 12, seed=4, x0=x0)
        est = InitialStateMhe(config, x0)
        for t in range(12):
            est.step(log.outputs[t])
        assert_allclose(est.current_estimate(), log.states[11], atol=1e-8)


class TestErrorDynamics(unittest.TestCase):
    def test_recursion_matches_simulation(self):
        config = vehicle_config()
        maps, N = config.maps, config.horizon
        log = simulate(config.plant, W_BOX, V_BOX, 40, seed=5, x0=np.ones(4))
        errors = run_estimator(config, log, x_bar0=np.zeros(4))
        dyn = error_dynamics(maps, config, VEHICLE_GAIN)
        w, v = log.process_noise, log.measurement_noise
        for k in range(1, 40 - N):
            w_stack = np.concatenate([w[k - 1], w[k : k + N].ravel()])
            v_stack = np.concatenate([v[k - 1], v[k : k + N + 1].ravel()])
            forced = np.linalg.solve(dyn.S_bar, dyn.S1 @ w_stack + dyn.S2 @ v_stack)
            assert_allclose(errors[k], dyn.A_bar_L @ errors[k - 1] + forced, atol=1e-8)

    def test_noise_free_error_decays_exponentially(self):
        config = vehicle_config()
        log = simulate(config.plant, Box.zero(4), Box.zero(3), 65, seed=6, x0=np.ones(4))
        errors = run_estimator(config, log, x_bar0=np.zeros(4))
        A_bar = error_dynamics(config.maps, config, VEHICLE_GAIN).A_bar_L
        rate = spectral_radius(A_bar) + 1e-3
        self.assertLess(rate, 1.0)
        powers = [np.linalg.matrix_power(A_bar, k) for k in range(60)]
        gain = max(np.linalg.norm(P, 2) / rate**k for k, P in enumerate(powers))
        e0 = np.linalg.norm(errors[0])
        self.assertGreater(e0, 0.0)
        for k in range(60):
            self.assertLessEqual(np.linalg.norm(errors[k]), gain * rate**k * e0 + 1e-9)

    def test_closed_loop_stable(self):
        for lam in (0.1, 0.5, 0.9):
            config = vehicle_config(lam=lam)
            dyn = error_dynamics(config.maps, config, VEHICLE_GAIN)
            self.assertLess(spectral_radius(dyn.A_bar_L), 1.0)

    def test_lambda_zero_rejected(self):
        config = vehicle_config(lam=0.0)
        with self.assertRaises(ConfigError):
            error_dynamics(config.maps, config, VEHICLE_GAIN)


class TestDecay(unittest.TestCase):
    def test_lyapunov_residual(self):
        A_L = vehicle_config().A_L
        P = lyapunov_weight(A_L, np.eye(4))
        assert_allclose(A_L.T @ P @ A_L - P + np.eye(4), np.zeros((4, 4)), atol=1e-10)

    def test_lyapunov_needs_schur(self):
        with self.assertRaises(NotSchurError):
            lyapunov_weight(np.array([[1.2]]), np.eye(1))

    def test_diagonal_system_passes(self):
        plant = LinearPlant(A=np.diag([0.9, 0.6]), C=np.eye(2))
        report = decay_monotonicity_report(
            plant, np.diag([0.3, 0.2]), 3, np.linspace(0.1, 0.9, 9), 0.15, 0.1
        )
        self.assertTrue(report.passed)
        self.assertEqual(len(report.rows), 8)
        self.assertTrue(report.derivatives_ok)
        for row in report.rows:
            self.assertGreater(row.min_eig_QbarL_low, 0.0)

    def test_derivatives_on_vehicle(self):
        report = decay_monotonicity_report(vehicle_plant(), VEHICLE_GAIN, 5, [0.25, 0.5], 0.15, 0.1)
        self.assertLessEqual(report.d_lambda_tilde_rel_error, 1e-6)
        self.assertLessEqual(report.d_lambda_tilde_sq_rel_error, 1e-6)

    def test_zero_mu_bar_gives_constant_decay_rate(self):
        # lambda_tilde = 1 / mu for every lambda, so both derivatives vanish
        report = decay_monotonicity_report(vehicle_plant(), VEHICLE_GAIN, 20, [0.25, 0.5], 0.15, 0.0)
        self.assertTrue(report.derivatives_ok)
        self.assertLessEqual(report.d_lambda_tilde_rel_error, 1e-6)
        for row in report.rows:
            scale = 1.0 + abs(row.min_eig_QbarL_high)
            self.assertLessEqual(abs(row.min_eig_diff), 1e-8 * scale)

    def test_grid_too_short(self):
        with self.assertRaises(ConfigError):
            decay_monotonicity_report(vehicle_plant(), VEHICLE_GAIN, 5, [0.5], 0.15, 0.1)


class TestBounds(unittest.TestCase):
    def test_noise_bound(self):
        self.assertAlmostEqual(noise_bound(Box(lower=[-3.0, 0.0], upper=[1.0, 4.0])), 5.0)

    def test_affine_recursion(self):
        config = vehicle_config()
        res = bound_sequence(
            config.plant, VEHICLE_GAIN, config.maps, config, 0.2, 0.5, 1.0, 0.0, 10
        )
        a, b = res.params.a, res.params.b
        self.assertEqual(len(res.zeta), 11)
        self.assertAlmostEqual(res.zeta[0], res.params.b0)
        for prev, cur in zip(res.zeta, res.zeta[1:]):
            self.assertAlmostEqual(cur, a * prev + b)
        if a < 1.0:
            self.assertAlmostEqual(res.zeta_inf, b / (1.0 - a))
            self.assertAlmostEqual(res.zeta_bar_inf, 1.0 / (1.0 - a))
        else:
            self.assertTrue(res.diverges)
            self.assertIsNone(res.zeta_inf)

    def test_envelope(self):
        config = vehicle_config()
        z_w, z_v = noise_bound(W_BOX), noise_bound(V_BOX)
        for seed in range(5):
            x0 = np.ones(4)
            log = simulate(config.plant, W_BOX, V_BOX, 30, seed=seed, x0=x0)
            errors = run_estimator(config, log, x_bar0=np.zeros(4))
            res = bound_sequence(
                config.plant, VEHICLE_GAIN, config.maps, config, z_w, z_v,
                float(np.linalg.norm(x0)), 0.0, len(errors),
            )
            for k, e in errors.items():
                self.assertLessEqual(np.linalg.norm(e), res.zeta[k] + 1e-9)

    def test_lambda_range(self):
        config = vehicle_config(lam=1.0)
        with self.assertRaises(ConfigError):
            bound_sequence(config.plant, VEHICLE_GAIN, config.maps, config, 0.1, 0.1, 0.0, 0.0, 3)

    def test_analysis_table(self):
        rows = analysis_table(vehicle_plant(), VEHICLE_GAIN, 5, [0.75, 0.25, 0.5], 0.15, 0.1, 0.2, 0.43)
        self.assertEqual([r.lam for r in rows], [0.25, 0.5, 0.75])
        self.assertIsNotNone(rows[0].min_eig_QbarL_diff)
        self.assertIsNone(rows[-1].min_eig_QbarL_diff)
        for row in rows:
            self.assertLess(row.rho_AbarL, 1.0)
