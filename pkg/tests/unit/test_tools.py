import unittest
from unittest.mock import MagicMock, patch

import numpy as np

from metamorphic_mhe.bench.scenarios import ExperimentSystem, build_system
from metamorphic_mhe.config.config import ExperimentConfig
from metamorphic_mhe.estimation.linmodel import observer_gain
from metamorphic_mhe.models.system_types import LinearPlant
from metamorphic_mhe.tools.tools import (
    DEFAULT_GRID,
    bound_report,
    decay_monotonicity,
    get_context,
    lambda_sweep,
    phi_monotonicity,
    rpi_box,
)


def diagonal_system() -> ExperimentSystem:
    plant = LinearPlant(A=np.diag([0.9, 0.6]), C=np.eye(2))
    return ExperimentSystem(
        plant=plant,
        observer=observer_gain(plant, np.diag([0.3, 0.2])),
        Q=np.eye(2),
        R=np.eye(2),
        M=np.eye(4),
    )


class TestTools(unittest.TestCase):
    def setUp(self):
        self.mock_ctx = MagicMock()
        self.mock_lifespan_context = MagicMock()
        self.mock_ctx.request_context.lifespan_context = self.mock_lifespan_context

        self.spec = ExperimentConfig(horizon=5, t_sim=30, eval_start=5, eval_length=20)
        self.system = build_system(self.spec)
        self.mock_lifespan_context.experiment = self.spec
        self.mock_lifespan_context.system = self.system

    def test_get_context(self):
        spec, system = get_context(self.mock_ctx)
        self.assertIs(spec, self.spec)
        self.assertIs(system, self.system)

    @patch("metamorphic_mhe.tools.tools.get_context")
    def test_rpi_box_vehicle_has_none(self, mock_get_context):
        mock_get_context.return_value = (self.spec, self.system)

        result = rpi_box()

        self.assertFalse(result["exists"])
        self.assertLess(result["spectral_radius"], 1.0)
        self.assertGreater(result["abs_spectral_radius"], 1.0)
        self.assertIn("reason", result)

    @patch("metamorphic_mhe.tools.tools.get_context")
    def test_rpi_box_scalar(self, mock_get_context):
        plant = LinearPlant(A=[[0.9]], C=[[1.0]])
        system = ExperimentSystem(
            plant=plant,
            observer=observer_gain(plant, [[0.4]]),
            Q=np.eye(1),
            R=np.eye(1),
            M=np.eye(2),
        )
        mock_get_context.return_value = (self.spec, system)

        # Q = [-0.5, 0.5] + 0.4 * [-1.25, 1.25] = [-1, 1] and A_L = 0.5
        result = rpi_box(w_half_width=0.5, v_half_width=1.25)

        self.assertTrue(result["exists"])
        np.testing.assert_allclose(result["lower"], [-2.0], atol=1e-5)
        np.testing.assert_allclose(result["upper"], [2.0], atol=1e-5)

    @patch("metamorphic_mhe.tools.tools.get_context")
    def test_phi_monotonicity_corollary(self, mock_get_context):
        mock_get_context.return_value = (self.spec, diagonal_system())

        report = phi_monotonicity(lambdas=[0.2, 0.5, 0.8], mode="corollary")

        self.assertTrue(report.passed)
        self.assertEqual(len(report.rows), 2)

    @patch("metamorphic_mhe.tools.tools.get_context")
    def test_decay_monotonicity_defaults(self, mock_get_context):
        mock_get_context.return_value = (self.spec, diagonal_system())

        report = decay_monotonicity(lambdas=[0.25, 0.5, 0.75])

        self.assertTrue(report.passed)
        self.assertEqual(len(report.rows), 2)

    @patch("metamorphic_mhe.tools.tools.get_context")
    def test_bound_report(self, mock_get_context):
        mock_get_context.return_value = (self.spec, self.system)

        rows = bound_report()

        self.assertEqual([r.lam for r in rows], DEFAULT_GRID)
        for row in rows:
            self.assertGreater(row.b, 0.0)

    @patch("metamorphic_mhe.tools.tools.get_context")
    def test_lambda_sweep_csv(self, mock_get_context):
        mock_get_context.return_value = (self.spec, self.system)

        csv_text = lambda_sweep(scenarios=2, lambdas=[0.0, 0.5])

        lines = csv_text.strip().split("\n")
        self.assertTrue(lines[0].startswith("estimator,lambda,armse"))
        self.assertEqual(len(lines), 4)
        self.assertTrue(lines[-1].startswith("fir,"))
