import unittest

import numpy as np
from numpy.testing import assert_allclose

from metamorphic_mhe.bench.scenarios import VEHICLE_GAIN, vehicle_plant
from metamorphic_mhe.errors import DimensionError, NotSchurError, RpiError
from metamorphic_mhe.estimation.linmodel import observer_gain
from metamorphic_mhe.estimation.setops import (
    disturbance_box,
    is_rpi,
    linear_image,
    minkowski_sum,
    rpi_box_outer,
)
from metamorphic_mhe.models.system_types import Box


class TestBoxArithmetic(unittest.TestCase):
    def test_linear_image(self):
        box = Box(lower=[-1.0, 0.0], upper=[1.0, 2.0])
        image = linear_image(np.array([[1.0, -1.0], [2.0, 0.0]]), box)
        assert_allclose(image.lower, [-3.0, -2.0])
        assert_allclose(image.upper, [1.0, 2.0])

    def test_linear_image_of_unbounded_box(self):
        box = Box(lower=[-np.inf, -1.0], upper=[np.inf, 1.0])
        image = linear_image(np.array([[0.0, 2.0]]), box)
        assert_allclose(image.lower, [-2.0])
        assert_allclose(image.upper, [2.0])

    def test_minkowski_sum(self):
        a = Box.symmetric([1.0, 2.0])
        b = Box(lower=[0.0, -1.0], upper=[1.0, 0.0])
        s = minkowski_sum(a, b)
        assert_allclose(s.lower, [-1.0, -3.0])
        assert_allclose(s.upper, [2.0, 2.0])

    def test_minkowski_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            minkowski_sum(Box.symmetric([1.0]), Box.symmetric([1.0, 1.0]))

    def test_disturbance_box(self):
        W = Box.symmetric([0.1])
        V = Box.symmetric([0.2])
        Q = disturbance_box(np.array([[1.0]]), W, np.array([[0.5]]), V)
        assert_allclose(Q.lower, [-0.2])
        assert_allclose(Q.upper, [0.2])


class TestRpiBox(unittest.TestCase):
    def test_scalar_fixed_point(self):
        E = rpi_box_outer(np.array([[0.5]]), Box.symmetric([1.0]))
        assert_allclose(E.lower, [-2.0], atol=1e-5)
        assert_allclose(E.upper, [2.0], atol=1e-5)
        self.assertTrue(is_rpi(np.array([[0.5]]), Box.symmetric([1.0]), E))

    def test_offset_disturbance(self):
        A_L = np.array([[0.5]])
        Q = Box(lower=[0.0], upper=[1.0])
        E = rpi_box_outer(A_L, Q)
        assert_allclose(E.lower, [0.0], atol=1e-5)
        assert_allclose(E.upper, [2.0], atol=1e-5)
        self.assertTrue(is_rpi(A_L, Q, E))

    def test_certificate_on_random_systems(self):
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(20):
            n = int(rng.integers(1, 5))
            A_L = rng.uniform(-1.0, 1.0, (n, n))
            A_L *= 0.9 / max(np.max(np.abs(np.linalg.eigvals(np.abs(A_L)))), 1e-3)
            Q = Box.symmetric(rng.uniform(0.1, 1.0, n))
            E = rpi_box_outer(A_L, Q)
            self.assertTrue(is_rpi(A_L, Q, E))
            self.assertTrue(E.contains(Q))

    def test_no_box_when_abs_matrix_unstable(self):
        # Schur stable, but rho(|A_L|) = 1.2
        A_L = np.array([[0.6, 0.6], [-0.6, 0.6]])
        with self.assertRaises(RpiError):
            rpi_box_outer(A_L, Box.symmetric([1.0, 1.0]))

    def test_vehicle_pre_estimator_has_no_box(self):
        obs = observer_gain(vehicle_plant(), VEHICLE_GAIN)
        Q = disturbance_box(np.eye(4), Box.symmetric(0.1 * np.ones(4)), VEHICLE_GAIN, Box.symmetric(0.25 * np.ones(3)))
        with self.assertRaises(RpiError):
            rpi_box_outer(obs.A_L, Q)

    def test_not_schur(self):
        with self.assertRaises(NotSchurError):
            rpi_box_outer(np.array([[1.5]]), Box.symmetric([1.0]))

    def test_unbounded_disturbance(self):
        with self.assertRaises(RpiError):
            rpi_box_outer(np.array([[0.5]]), Box.unbounded(1))


class TestRandomInstances(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.Generator(np.random.Philox(29))

    def random_box(self, d):
        lower = self.rng.uniform(-2.0, 1.0, d)
        return Box(lower=lower, upper=lower + self.rng.uniform(0.0, 2.0, d))

    def sample(self, box, count):
        return self.rng.uniform(box.lower, box.upper, (count, box.dim))

    def test_images_and_sums_contain_their_points(self):
        for _ in range(20):
            d, r = int(self.rng.integers(1, 5)), int(self.rng.integers(1, 5))
            M = self.rng.standard_normal((r, d))
            a, b = self.random_box(d), self.random_box(d)
            image, total = linear_image(M, a), minkowski_sum(a, b)
            xs, ys = self.sample(a, 200), self.sample(b, 200)
            for x, y in zip(xs, ys):
                self.assertTrue(image.contains_point(M @ x, tol=1e-12))
                self.assertTrue(total.contains_point(x + y, tol=1e-12))
            # vertices reach the image bounds
            corners = np.array(np.meshgrid(*zip(a.lower, a.upper))).reshape(d, -1).T
            assert_allclose((corners @ M.T).min(axis=0), image.lower, atol=1e-12)
            assert_allclose((corners @ M.T).max(axis=0), image.upper, atol=1e-12)

    def test_disturbance_box_contains_noise_combinations(self):
        for _ in range(20):
            n, m, p = (int(v) for v in self.rng.integers(1, 4, 3))
            G, L = self.rng.standard_normal((n, m)), self.rng.standard_normal((n, p))
            W, V = self.random_box(m), self.random_box(p)
            Q = disturbance_box(G, W, L, V)
            for w, v in zip(self.sample(W, 100), self.sample(V, 100)):
                self.assertTrue(Q.contains_point(G @ w - L @ v, tol=1e-12))

    def test_rpi_box_grows_with_disturbance(self):
        for _ in range(20):
            n = int(self.rng.integers(1, 5))
            A_L = self.rng.uniform(-1.0, 1.0, (n, n))
            A_L *= 0.8 / max(np.max(np.abs(np.linalg.eigvals(np.abs(A_L)))), 1e-3)
            small = self.random_box(n)
            large = Box(
                lower=small.lower - self.rng.uniform(0.0, 1.0, n),
                upper=small.upper + self.rng.uniform(0.0, 1.0, n),
            )
            E_small, E_large = rpi_box_outer(A_L, small), rpi_box_outer(A_L, large)
            self.assertTrue(E_large.contains(E_small, tol=1e-8))
