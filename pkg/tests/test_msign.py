import unittest

import numpy as np

from muonbench.errors import ConfigError, DegenerateInputError, RangeError
from muonbench.linalg import Rng, svd
from muonbench.msign import (
    ATTRACTOR_BAND,
    NOMINAL_BAND,
    OPTIMIZED,
    TAYLOR,
    NsCoefficients,
    band_survey,
    coefficients,
    msign_exact,
    msign_newton_schulz,
    newton_schulz_step,
)

from tests import MuonbenchTestCase
from tests.oracles import gram_inverse_sqrt


class CoefficientTestCase(MuonbenchTestCase):

    def test_presets(self):
        self.assertEqual((OPTIMIZED.a, OPTIMIZED.b, OPTIMIZED.c), (3.4445, -4.7750, 2.0315))
        self.assertEqual((TAYLOR.a, TAYLOR.b, TAYLOR.c), (15 / 8, -5 / 4, 3 / 8))
        self.assertIs(coefficients('optimized'), OPTIMIZED)
        self.assertIs(coefficients('taylor'), TAYLOR)
        self.assertIs(coefficients(TAYLOR), TAYLOR)
        self.assertRaises(ConfigError, coefficients, 'cubic')

    def test_polynomial(self):
        self.assertAlmostEqual(OPTIMIZED(1.0), 0.7010, places=12)
        self.assertAlmostEqual(TAYLOR(1.0), 1.0, places=15)
        # the optimized quintic's local extrema
        self.assertAlmostEqual(OPTIMIZED(0.5545), 1.2024, places=4)
        self.assertAlmostEqual(OPTIMIZED(1.0501), 0.6818, places=4)


class NewtonSchulzStepTestCase(MuonbenchTestCase):

    def test_one_by_one(self):
        out = newton_schulz_step(np.array([[1.0]]), OPTIMIZED)
        self.assertAlmostEqual(out[0, 0], OPTIMIZED.a + OPTIMIZED.b + OPTIMIZED.c,
                               places=14)

    def test_zero(self):
        self.assertArrayEqual(newton_schulz_step(np.zeros((3, 2)), OPTIMIZED),
                              np.zeros((3, 2)))

    def test_diagonal(self):
        out = newton_schulz_step(np.diag([0.3, 0.8]), OPTIMIZED)
        self.assertAllClose(out, np.diag([OPTIMIZED(0.3), OPTIMIZED(0.8)]), 1e-14)

    def test_wide_equals_transposed_tall(self):
        x = self.random_matrix((3, 7), 1) / 10
        self.assertAllClose(newton_schulz_step(x, OPTIMIZED),
                            newton_schulz_step(x.T, OPTIMIZED).T, 1e-15)

    def test_spectrum_only(self):
        s = np.array([1.0, 0.7, 0.4, 0.1])
        m, u, v = self.with_spectrum(s, 9, 4, 2)
        report = msign_newton_schulz(m, OPTIMIZED, 5)
        t = s / np.linalg.norm(s)
        for _ in range(5):
            t = OPTIMIZED(t)
        self.assertAllClose(report.result, (u * t) @ v.T, 1e-12)


class MsignExactTestCase(MuonbenchTestCase):

    def test_diagonal_signs(self):
        self.assertAllClose(msign_exact(np.diag([2.0, -3.0])), np.diag([1.0, -1.0]), 1e-15)

    def test_orthogonal_fixed_point(self):
        q = self.orthogonal(5, 3)
        self.assertAllClose(msign_exact(q), q, 1e-10)

    def test_gram_oracle(self):
        m = self.random_matrix((6, 4), 4)
        o = msign_exact(m)
        self.assertAllClose(o.T @ o, np.eye(4), 1e-10)
        self.assertRelClose(o, gram_inverse_sqrt(m), 1e-8)

    def test_full_rank_batch(self):
        shapes = ((6, 4), (4, 6), (7, 7))
        for k in range(100):
            m = self.random_matrix(shapes[k % 3], 5, k)
            o = msign_exact(m)
            self.assertAllClose(svd(o).singular_values, np.ones(min(m.shape)), 1e-10)
            if m.shape[0] >= m.shape[1]:
                self.assertRelClose(o, gram_inverse_sqrt(m), 1e-8)
            else:
                self.assertRelClose(o, gram_inverse_sqrt(m.T).T, 1e-8)

    def test_square_is_orthogonal(self):
        o = msign_exact(self.random_matrix((8, 8), 6))
        self.assertAllClose(o.T @ o, np.eye(8), 1e-10)
        self.assertAllClose(o @ o.T, np.eye(8), 1e-10)

    def test_rank_deficient(self):
        m, u, v = self.with_spectrum([3.0, 1.0], 6, 5, 7)
        o = msign_exact(m)
        self.assertAllClose(o, u @ v.T, 1e-10)
        self.assertAllClose(svd(o).singular_values, [1.0, 1.0], 1e-10)

    def test_sign_symmetry(self):
        m = self.random_matrix((7, 5), 8)
        self.assertArrayEqual(msign_exact(-m), -msign_exact(m))
        plus = msign_newton_schulz(m).result
        minus = msign_newton_schulz(-m).result
        self.assertAllClose(minus, -plus, 1e-12)

    def test_scale_invariance(self):
        m = self.random_matrix((7, 5), 9)
        base = msign_newton_schulz(m).result
        for c in (0.25, 2.0, 1024.0):
            self.assertArrayEqual(msign_newton_schulz(c * m).result, base)
        for c in (3.0, 0.1):
            self.assertAllClose(msign_newton_schulz(c * m).result, base, 1e-12)
            self.assertAllClose(msign_exact(c * m), msign_exact(m), 1e-10)

    def test_nuclear_norm(self):
        for k in range(20):
            m = self.random_matrix((6, 5), 10, k)
            nuclear = np.sum(svd(m).singular_values)
            value = np.trace(m.T @ msign_exact(m))
            self.assertLessEqual(abs(value - nuclear), 1e-8 * nuclear)

    def test_steepest_descent_optimality(self):
        for k in range(20):
            m = self.random_matrix((5, 4), 11, k)
            best = np.trace(m.T @ msign_exact(m))
            rng = self.rng(12, k)
            for _ in range(1000):
                u = rng.normal((5, 4))
                u /= np.linalg.norm(u, 2)
                self.assertLessEqual(np.trace(m.T @ u), best + 1e-8)

    def test_zero(self):
        self.assertRaises(DegenerateInputError, msign_exact, np.zeros((2, 2)))


class MsignNewtonSchulzTestCase(MuonbenchTestCase):

    def test_report(self):
        m = self.random_matrix((10, 6), 13)
        report = msign_newton_schulz(m, OPTIMIZED, 5, oracle=True)
        self.assertEqual(report.iterations_used, 5)
        self.assertLessEqual(report.singular_value_min, report.singular_value_max)
        self.assertIsNotNone(report.deviation_from_oracle)
        self.assertIsNone(msign_newton_schulz(m).deviation_from_oracle)
        self.assertEqual(msign_newton_schulz(m, 'taylor', 3).iterations_used, 3)

    def test_errors(self):
        self.assertRaises(DegenerateInputError, msign_newton_schulz, np.zeros((3, 3)))
        self.assertRaises(RangeError, msign_newton_schulz, np.eye(3), OPTIMIZED, 0)

    def test_orthogonal_input(self):
        report = msign_newton_schulz(self.orthogonal(8, 14), OPTIMIZED, 5)
        self.assertGreater(report.singular_value_min, NOMINAL_BAND[0])
        self.assertLess(report.singular_value_max, NOMINAL_BAND[1])
        self.assertAlmostEqual(report.singular_value_min, report.singular_value_max,
                               places=10)

    def test_orthogonal_input_can_leave_nominal_band(self):
        # the uniform spectrum 1/8 lands just below the local minimum 0.6818
        report = msign_newton_schulz(self.orthogonal(64, 15), OPTIMIZED, 5)
        self.assertLess(report.singular_value_max, NOMINAL_BAND[0])
        self.assertGreater(report.singular_value_min, 0.68)

    def test_normalized_msign_input(self):
        exact = msign_exact(self.random_matrix((6, 4), 16))
        report = msign_newton_schulz(exact / np.linalg.norm(exact), OPTIMIZED, 5,
                                     oracle=True)
        self.assertGreater(report.singular_value_min, NOMINAL_BAND[0])
        self.assertLess(report.singular_value_max, NOMINAL_BAND[1])
        self.assertLess(report.deviation_from_oracle, 0.3)

    def test_condition_number_100(self):
        s = np.logspace(0, -2, 64)
        m, _, _ = self.with_spectrum(s, 64, 64, 17)
        report = msign_newton_schulz(m, OPTIMIZED, 5, oracle=True)
        self.assertGreater(report.singular_value_min, ATTRACTOR_BAND[0])
        self.assertLess(report.singular_value_max, ATTRACTOR_BAND[1])
        self.assertLess(report.deviation_from_oracle, 0.35)

    def test_taylor_converges_monotonically(self):
        s = np.array([1.0, 0.5, 0.25])
        m, _, _ = self.with_spectrum(s, 5, 3, 18)
        previous = 0.0
        for k in (1, 2, 3, 4):
            report = msign_newton_schulz(m, TAYLOR, k)
            self.assertGreater(report.singular_value_min, previous)
            self.assertLessEqual(report.singular_value_max, 1.0 + 1e-12)
            previous = report.singular_value_min
        self.assertGreater(previous, 0.99)
        report = msign_newton_schulz(m, TAYLOR, 30)
        self.assertAlmostEqual(report.singular_value_min, 1.0, places=12)
        self.assertAlmostEqual(report.singular_value_max, 1.0, places=12)


class BandSurveyTestCase(MuonbenchTestCase):

    def test_rectangular_inputs_stay_in_attractor_band(self):
        for shape in ((128, 32), (32, 128)):
            survey = band_survey(shape, OPTIMIZED, 5, trials=200,
                                 seed=self.random_seed, band=ATTRACTOR_BAND)
            self.assertEqual(survey.trials, 200)
            self.assertEqual(survey.violations, 0, survey)
            self.assertTrue(survey.passed)
            self.assertLess(survey.max_deviation, 0.35)

    def test_upper_bound_for_every_shape(self):
        for shape, trials in (((8, 8), 200), ((64, 64), 25), ((32, 128), 50)):
            survey = band_survey(shape, OPTIMIZED, 5, trials=trials, seed=1,
                                 oracle=False)
            self.assertLess(survey.worst_max, 1.3)
            self.assertLessEqual(survey.worst_max, 1.2025)

    def test_one_step_misses_band(self):
        survey = band_survey((32, 32), OPTIMIZED, 1, trials=10, seed=2, oracle=False)
        self.assertEqual(survey.violations, 10)
        self.assertFalse(survey.passed)
        # the worst trial reproduces from its seed alone
        m = Rng(survey.worst_seed).normal((32, 32))
        report = msign_newton_schulz(m, OPTIMIZED, 1)
        distance = max(NOMINAL_BAND[0] - report.singular_value_min,
                       report.singular_value_max - NOMINAL_BAND[1])
        self.assertGreaterEqual(distance, 0.0)

    def test_deterministic(self):
        a = band_survey((8, 8), trials=5, seed=3)
        b = band_survey((8, 8), trials=5, seed=3)
        self.assertEqual(a, b)

    def test_errors(self):
        self.assertRaises(RangeError, band_survey, (8, 8), trials=0)
        self.assertRaises(ConfigError, band_survey, (8, 8), coeffs='cubic', trials=1)

    def test_custom_coefficients(self):
        identity = NsCoefficients(1.0, 0.0, 0.0, 'identity')
        m = self.random_matrix((4, 3), 19)
        report = msign_newton_schulz(m, identity, 4)
        self.assertAllClose(report.result, m / np.linalg.norm(m), 1e-15)


if __name__ == '__main__':
    unittest.main()
