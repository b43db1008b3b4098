import unittest

import numpy as np
from numpy.testing import assert_allclose
from pydantic import ValidationError

from metamorphic_mhe.bench.scenarios import VEHICLE_GAIN, vehicle_plant
from metamorphic_mhe.errors import DimensionError, InfeasibleError, WindowNotReadyError
from metamorphic_mhe.estimation.linmodel import observer_gain, observer_run
from metamorphic_mhe.estimation.mmhe_full import (
    HorizonWindow,
    MetamorphicMhe,
    MmheConfig,
    build_condensed_qp,
    cost_lambda_derivative,
    initial_state,
    step,
)
from metamorphic_mhe.estimation.riccati import metamorphic_kalman_filter, qe_weights
from metamorphic_mhe.models.estimation_types import QpStatus, RiccatiIterate
from metamorphic_mhe.models.system_types import Box

R = 0.5 * np.eye(3)
M = 10.0 * np.eye(7)
Q = np.eye(4)


def make_config(lam, horizon=5, x0_prior=None, wide=True, **overrides):
    plant = vehicle_plant()
    w, v = (1e3, 1e3) if wide else (0.1, 0.25)
    fields = dict(
        plant=plant,
        observer=observer_gain(plant, VEHICLE_GAIN),
        lam=lam,
        M=M,
        Q=Q,
        R=R,
        horizon=horizon,
        state_box=Box.symmetric(1e6 * np.ones(4)),
        process_box=Box.symmetric(w * np.ones(4)),
        measurement_box=Box.symmetric(v * np.ones(3)),
        x0_prior=np.zeros(8) if x0_prior is None else x0_prior,
        Phi0=10.0 * np.eye(8) if lam > 0.0 else None,
    )
    fields.update(overrides)
    return MmheConfig(**fields)


def augmented_data(config, steps, seed, noise=True):
    """Outputs of the augmented model x_e+ = A_e x_e + G_e wbar, y = C_e x_e + v."""
    rng = np.random.Generator(np.random.Philox(seed))
    aug = config.augmented
    x = np.concatenate([5.0 * np.ones(4), 10.0 * np.ones(4)])
    xs, ys = [x], []
    for _ in range(steps):
        w = rng.uniform(-0.1, 0.1, 4) if noise else np.zeros(4)
        v = rng.uniform(-0.25, 0.25, 3) if noise else np.zeros(3)
        ys.append(aug.C_e @ x + v)
        x = aug.A_e @ x + aug.G_e @ np.concatenate([w, v])
        xs.append(x)
    return np.array(xs), np.array(ys)


class TestMmheConfig(unittest.TestCase):
    def test_lambda_range(self):
        with self.assertRaises(ValueError):
            make_config(1.0)

    def test_phi0_required(self):
        with self.assertRaises(ValidationError) as ctx:
            make_config(0.5, Phi0=None)
        self.assertIn("Phi0 must be 8x8", str(ctx.exception))

    def test_noise_box_must_contain_origin(self):
        with self.assertRaises(ValidationError) as ctx:
            make_config(0.5, process_box=Box(lower=np.zeros(4), upper=np.ones(4)))
        self.assertIn("process noise box must contain the origin", str(ctx.exception))

    def test_error_box_must_be_invariant(self):
        with self.assertRaises(ValidationError) as ctx:
            make_config(0.5, error_box=Box.symmetric(np.ones(4)))
        self.assertIn("not robustly invariant", str(ctx.exception))

    def test_serialized_lambda_alias(self):
        config = make_config(0.25)
        self.assertEqual(config.model_dump(by_alias=True)["lambda"], 0.25)

    def test_augmented_boxes(self):
        config = make_config(0.5)
        self.assertEqual(config.augmented_state_box.dim, 8)
        self.assertFalse(config.augmented_state_box.is_bounded)
        self.assertEqual(config.augmented_noise_box.dim, 7)


class TestHorizonWindow(unittest.TestCase):
    def test_rolls(self):
        window = HorizonWindow(3)
        for k in range(5):
            window.push(k, np.array([float(k)]))
        self.assertTrue(window.is_full)
        self.assertEqual(window.start, 2)
        assert_allclose(window.as_array().ravel(), [2.0, 3.0, 4.0])

    def test_indices_contiguous(self):
        window = HorizonWindow(3)
        window.push(0, np.zeros(1))
        with self.assertRaises(ValueError):
            window.push(2, np.zeros(1))

    def test_full_window_required(self):
        config = make_config(0.5)
        state = initial_state(config)
        window = HorizonWindow(config.horizon)
        window.push(0, np.zeros(3))
        with self.assertRaises(WindowNotReadyError):
            build_condensed_qp(window, state, config)


class TestLambdaZero(unittest.TestCase):
    def test_follows_deterministic_observer(self):
        rng = np.random.Generator(np.random.Philox(1))
        x0 = rng.standard_normal(8)
        config = make_config(0.0, x0_prior=x0)
        _, ys = augmented_data(config, 30, seed=2)
        xs = MetamorphicMhe(config).run(ys)
        x = x0
        for k in range(31):
            assert_allclose(xs[k], x, rtol=1e-10, atol=1e-10)
            x = config.augmented.A_e @ x

    def test_observer_block_matches_luenberger(self):
        truth0 = np.concatenate([5.0 * np.ones(4), 10.0 * np.ones(4)])
        config = make_config(0.0, x0_prior=truth0, wide=False)
        truth, ys = augmented_data(config, 40, seed=3, noise=False)
        xs = MetamorphicMhe(config).run(ys)
        luenberger = observer_run(config.plant, config.observer, truth0[:4], ys)
        self.assertLessEqual(np.max(np.abs(xs[:, :4] - luenberger)), 1e-6)
        self.assertLessEqual(np.max(np.abs(xs - truth)), 1e-6)


class TestUnconstrainedEquivalence(unittest.TestCase):
    def test_matches_metamorphic_kalman_filter(self):
        rng = np.random.Generator(np.random.Philox(4))
        x0 = rng.standard_normal(8)
        for lam in (0.25, 0.5, 0.75):
            config = make_config(lam, x0_prior=x0)
            _, ys = augmented_data(config, 25, seed=5)
            mhe = MetamorphicMhe(config)
            xs = mhe.run(ys)
            kf = metamorphic_kalman_filter(
                config.augmented,
                qe_weights(lam, M, Q),
                R,
                x0,
                RiccatiIterate(value=10.0 * np.eye(8)),
                ys,
            )
            self.assertLessEqual(np.max(np.abs(xs - kf)), 1e-6)
            self.assertTrue(all(r.status == QpStatus.OPTIMAL for r in mhe.records))
            self.assertTrue(all(r.active_constraints == 0 for r in mhe.records))


class TestConstrainedStep(unittest.TestCase):
    def test_records_and_costs(self):
        config = make_config(0.5, wide=False)
        _, ys = augmented_data(config, 12, seed=6)
        mhe = MetamorphicMhe(config)
        mhe.run(ys)
        self.assertEqual(len(mhe.records), 12)
        carried = 0.0
        costs = {0: 0.0}
        for rec in mhe.records:
            start = max(0, rec.time - config.horizon)
            previous = costs[start]
            self.assertAlmostEqual(rec.carried_cost, 0.5 * rec.objective + previous, places=8)
            self.assertAlmostEqual(rec.normalized_objective, rec.objective + previous / 0.5, places=8)
            costs[rec.time] = rec.carried_cost
            carried = rec.carried_cost
        self.assertGreater(carried, 0.0)
        assert_allclose(mhe.estimate, mhe.records[-1].estimate)

    def test_estimate_respects_state_box(self):
        config = make_config(0.5, wide=False, state_box=Box.symmetric(100.0 * np.ones(4)))
        _, ys = augmented_data(config, 6, seed=7)
        xs = MetamorphicMhe(config).run(ys)
        self.assertTrue(np.all(np.abs(xs[1:, :4]) <= 100.0 + 1e-7))

    def test_infeasible_window_keeps_state(self):
        config = make_config(
            0.5,
            process_box=Box.symmetric(1e-3 * np.ones(4)),
            measurement_box=Box.symmetric(1e-3 * np.ones(3)),
        )
        rng = np.random.Generator(np.random.Philox(8))
        mhe = MetamorphicMhe(config)
        with self.assertRaises(InfeasibleError):
            for _ in range(config.horizon + 2):
                mhe.step(rng.uniform(-100.0, 100.0, 3))
        self.assertGreaterEqual(len(mhe.records), 1)
        self.assertEqual(mhe.state.time, len(mhe.records))

    def test_measurement_dimension(self):
        config = make_config(0.5)
        with self.assertRaises(DimensionError):
            step(np.zeros(2), initial_state(config), config)

    def test_cost_derivative_non_positive(self):
        config = make_config(0.5, wide=False)
        _, ys = augmented_data(config, 8, seed=9)
        mhe = MetamorphicMhe(config)
        mhe.run(ys)
        state = mhe.state
        start = state.time - (state.trajectory.shape[0] - 1)
        z = np.concatenate([state.trajectory[0], state.noise.ravel()])
        self.assertEqual(start, state.time - config.horizon)
        self.assertLessEqual(cost_lambda_derivative(z, state, config), 1e-12)
