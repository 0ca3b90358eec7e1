import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from equiv_app.errors import InapplicableBoundError, PreconditionError
from equiv_app.measures import (
    AtomicMeasure, KolmogorovSchedule, SampledDensity, bai_bound_terms, cdf_smoothing_term,
    empirical_spectrum, kolmogorov_distance, kolmogorov_rate_exponent, limit_distance_budget,
    mp_shape_distance_bound, stieltjes, tail_stieltjes_integral,
)


def uniform_density(points=101):
    grid = np.linspace(0.0, 1.0, points)
    return SampledDensity(grid, np.ones(points))


class AtomicMeasureTests(SimpleTestCase):
    def test_close_atoms_merge(self):
        """Test that atoms closer than the merge tolerance collapse"""
        mu = AtomicMeasure(np.array([2.0, 1.0, 1.0 + 1e-12]), np.array([0.5, 0.25, 0.25]))
        np.testing.assert_array_equal(mu.positions, [1.0, 2.0])
        np.testing.assert_allclose(mu.weights, [0.5, 0.5])

    def test_validation(self):
        with self.assertRaises(PreconditionError):
            AtomicMeasure(np.array([1.0, 2.0]), np.array([0.5, 0.6]))
        with self.assertRaises(PreconditionError):
            AtomicMeasure(np.array([-1.0]), np.array([1.0]))

    def test_moments_and_transform(self):
        mu = AtomicMeasure.from_atoms([1.0, 3.0], [0.25, 0.25], atom_at_zero=0.5)
        self.assertAlmostEqual(mu.atom_at_zero, 0.5)
        self.assertAlmostEqual(mu.mean(), 1.0)
        self.assertAlmostEqual(mu.second_moment(), 2.5)
        self.assertAlmostEqual(stieltjes(AtomicMeasure.dirac(2.0), -1), 1 / 3)

    def test_csv_round_trip(self):
        mu = empirical_spectrum(np.diag([0.5, 1.5, 1.5, 4.0]))
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'spectrum.csv'
            mu.to_csv(path)
            restored = AtomicMeasure.from_csv(path)
        np.testing.assert_allclose(restored.positions, mu.positions)
        np.testing.assert_allclose(restored.weights, mu.weights, atol=1e-11)


class SampledDensityTests(SimpleTestCase):
    def test_mass_must_be_one(self):
        with self.assertRaises(PreconditionError):
            SampledDensity(np.linspace(0, 2, 11), np.ones(11))

    def test_transform_is_exact_for_linear_density(self):
        """Test the piecewise-linear transform against log 2 for the uniform law"""
        self.assertAlmostEqual(uniform_density().stieltjes(-1).real, np.log(2.0), places=12)

    def test_cdf(self):
        F = uniform_density().cdf()
        np.testing.assert_allclose(F(np.array([-1.0, 0.25, 2.0])), [0.0, 0.25, 1.0])


class KolmogorovDistanceTests(SimpleTestCase):
    def test_two_diracs(self):
        self.assertEqual(kolmogorov_distance(AtomicMeasure.dirac(1).cdf(), AtomicMeasure.dirac(2).cdf()), 1.0)

    def test_identical_spectra(self):
        mu = empirical_spectrum(np.diag([1.0, 2.0, 3.0]))
        self.assertEqual(kolmogorov_distance(mu.cdf(), mu.cdf()), 0.0)

    def test_step_against_continuous(self):
        """Test that the jump of a Dirac at 1/2 is seen against the uniform CDF"""
        distance = kolmogorov_distance(AtomicMeasure.dirac(0.5).cdf(), uniform_density().cdf())
        self.assertAlmostEqual(distance, 0.5, places=9)

    def test_rejects_other_types(self):
        with self.assertRaises(PreconditionError):
            kolmogorov_distance(lambda t: t, AtomicMeasure.dirac(1).cdf())

    def test_metric_properties(self):
        """Test symmetry, the triangle inequality and zero distance only for equal atoms"""
        rng = np.random.default_rng(17)
        measures = [
            AtomicMeasure(rng.uniform(0.0, 3.0, size=5), rng.dirichlet(np.ones(5)))
            for _ in range(6)
        ]
        cdfs = [mu.cdf() for mu in measures]
        for first in cdfs:
            for second in cdfs:
                forward = kolmogorov_distance(first, second)
                self.assertAlmostEqual(forward, kolmogorov_distance(second, first), places=12)
                if first is not second:
                    self.assertGreater(forward, 0.0)
                for third in cdfs:
                    self.assertLessEqual(
                        kolmogorov_distance(first, third),
                        forward + kolmogorov_distance(second, third) + 1e-12,
                    )

    def test_zero_for_reordered_atoms(self):
        mu = AtomicMeasure(np.array([0.5, 2.0, 1.0]), np.array([0.2, 0.3, 0.5]))
        same = AtomicMeasure(np.array([2.0, 1.0, 0.5]), np.array([0.3, 0.5, 0.2]))
        self.assertEqual(kolmogorov_distance(mu.cdf(), same.cdf()), 0.0)


class KolmogorovBoundTests(SimpleTestCase):
    def test_schedule_balances_terms(self):
        """Test y = eps^(2/69) and A = eps^(-5/69) for beta = 1/2, l = k = 9"""
        eps = 1e-3
        schedule = KolmogorovSchedule(beta=0.5, l=9, k=9, sigma=1.0, epsilon=eps)
        self.assertAlmostEqual(schedule.y, eps ** (2 / 69), places=12)
        self.assertAlmostEqual(schedule.A, eps ** (-5 / 69), places=10)
        for term in schedule.terms():
            self.assertAlmostEqual(term, eps ** (1 / 69), places=10)

    def test_schedule_preconditions(self):
        with self.assertRaises(InapplicableBoundError):
            KolmogorovSchedule(beta=1.5, l=9, k=9, sigma=1.0, epsilon=1e-3)
        with self.assertRaises(InapplicableBoundError):
            KolmogorovSchedule(beta=0.5, l=9, k=9, sigma=0.5, epsilon=1e-3)

    def test_rate_exponent(self):
        self.assertAlmostEqual(kolmogorov_rate_exponent(0.5, 9, 9), 1 / 69)

    def test_certificate_with_zero_gap(self):
        schedule = KolmogorovSchedule(beta=0.5, l=9, k=9, sigma=1.0, epsilon=1e-2)
        report = bai_bound_terms(lambda w: 0.0, schedule, points=11)
        self.assertEqual(report.transform_term, 0.0)
        self.assertAlmostEqual(report.tail_term, 1 / (schedule.y ** 2 * schedule.A))
        self.assertAlmostEqual(report.certificate, report.tail_term + report.smoothing_term)

    def test_tail_integral_vanishes_for_equal_measures(self):
        mu = AtomicMeasure.dirac(1.0)
        integral, bound = tail_stieltjes_integral(mu, mu, 0.5, 3.0)
        self.assertEqual(integral, 0.0)
        self.assertAlmostEqual(bound, 4 / (0.25 * 3.0))

    def test_tail_integral_stays_below_bound(self):
        """Test the tail integral of random atomic pairs against 4 sigma^3/(y^2 A)"""
        rng = np.random.default_rng(29)
        for _ in range(20):
            mu = AtomicMeasure(rng.uniform(0.0, 2.0, size=4), rng.dirichlet(np.ones(4)))
            nu = AtomicMeasure(rng.uniform(0.0, 2.0, size=4), rng.dirichlet(np.ones(4)))
            y = rng.uniform(0.05, 0.5)
            A = rng.uniform(4.0, 10.0)
            integral, bound = tail_stieltjes_integral(mu, nu, y, A)
            self.assertGreater(integral, 0.0)
            self.assertLessEqual(integral, bound)

    def test_smoothing_term_of_a_jump(self):
        """Test that a unit jump gives about 2 tan(3pi/8)"""
        term = cdf_smoothing_term(AtomicMeasure.dirac(0.0).cdf(), 0.01)
        self.assertGreater(term, 4.5)
        self.assertLess(term, 5.0)

    def test_distance_budgets(self):
        self.assertAlmostEqual(mp_shape_distance_bound(0.5, 1.0), 0.5)
        self.assertAlmostEqual(limit_distance_budget(0.1, 0.5, 1.0, 0.01), 0.61)
        with self.assertRaises(PreconditionError):
            mp_shape_distance_bound(0.0, 1.0)
