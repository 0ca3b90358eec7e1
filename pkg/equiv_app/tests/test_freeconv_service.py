import numpy as np
from django.test import SimpleTestCase

from equiv_app.equiv_service import CovarianceModel
from equiv_app.errors import PreconditionError
from equiv_app.freeconv_service import (
    density_holder_bound, free_multiplicative_mp, holder_constant, marchenko_pastur_density,
    nu_check_measure, stieltjes_check, support_bracket, zero_atom,
)
from equiv_app.measures import kolmogorov_distance, mp_shape_distance_bound


class FreeConvolutionTests(SimpleTestCase):
    def test_identity_gamma_one_matches_closed_form(self):
        """Test the recovered MP(1) density against sqrt((4 - x) x) / (2 pi x)"""
        result = free_multiplicative_mp(CovarianceModel(np.ones(50), 1.0))
        xs = np.array([1.0, 2.0, 3.0])
        recovered = np.interp(xs, result.density.grid, result.density.values)
        np.testing.assert_allclose(recovered, marchenko_pastur_density(xs, 1.0), atol=2e-3)

    def test_zero_atom_for_wide_matrices(self):
        """Test that gamma = 4 leaves mass 3/4 at zero"""
        model = CovarianceModel(np.ones(40), 4.0)
        self.assertAlmostEqual(zero_atom(model), 0.75)
        result = free_multiplicative_mp(model)
        self.assertAlmostEqual(result.atom_at_zero, 0.75, delta=5e-3)
        self.assertAlmostEqual(result.total_mass, 1.0, delta=5e-3)

    def test_transform_of_recovered_measure(self):
        model = CovarianceModel(np.ones(50), 0.5)
        result = free_multiplicative_mp(model)
        self.assertLess(stieltjes_check(result, model), 2e-3)

    def test_two_level_population(self):
        model = CovarianceModel(np.repeat([2.0, 0.5], 20), 0.3)
        result = free_multiplicative_mp(model)
        self.assertAlmostEqual(result.atom_at_zero, 0.0, delta=1e-2)
        self.assertEqual(result.support, support_bracket(model))

    def test_marchenko_pastur_shapes_stay_close(self):
        """Test that nearby shape parameters move the recovered CDF by at most the shape bound"""
        for gamma, other in ((0.5, 0.6), (1.0, 1.2), (2.0, 2.5)):
            first = free_multiplicative_mp(CovarianceModel(np.ones(40), gamma))
            second = free_multiplicative_mp(CovarianceModel(np.ones(40), other))
            distance = kolmogorov_distance(first.cdf, second.cdf)
            self.assertGreater(distance, 0.0)
            self.assertLessEqual(distance, mp_shape_distance_bound(gamma, other) + 5e-3)

    def test_zero_population(self):
        result = free_multiplicative_mp(CovarianceModel(np.zeros(5), 0.5))
        self.assertEqual(result.atom_at_zero, 1.0)
        self.assertEqual(float(result.cdf(np.array(0.0))), 1.0)

    def test_invalid_settings(self):
        model = CovarianceModel(np.ones(4), 0.5)
        with self.assertRaises(PreconditionError):
            free_multiplicative_mp(model, grid_size=32)
        with self.assertRaises(PreconditionError):
            free_multiplicative_mp(model, epsilon_schedule=(1e-3, 1e-2))
        with self.assertRaises(PreconditionError):
            free_multiplicative_mp(model, epsilon_schedule=(1e-2, 1e-2))

    def test_support_bracket(self):
        lo, hi = support_bracket(CovarianceModel(np.ones(4), 0.25))
        self.assertAlmostEqual(lo, 0.25)
        self.assertAlmostEqual(hi, 2.25)
        self.assertEqual(support_bracket(CovarianceModel(np.ones(4), 2.0))[0], 0.0)


class DerivedMeasureTests(SimpleTestCase):
    def test_check_measure_for_wide_matrices(self):
        """Test that (1 - gamma) delta_0 + gamma nu keeps unit mass and almost no atom"""
        result = free_multiplicative_mp(CovarianceModel(np.ones(40), 4.0))
        check = nu_check_measure(result, 4.0)
        self.assertLess(check.atom_at_zero, 0.02)
        self.assertAlmostEqual(check.total_mass, 1.0, delta=5e-3)
        self.assertIs(nu_check_measure(result, 1.0), result)
        with self.assertRaises(PreconditionError):
            nu_check_measure(result, 0.0)

    def test_holder_constant_within_bound(self):
        model = CovarianceModel(np.ones(50), 0.5)
        result = free_multiplicative_mp(model)
        self.assertLessEqual(holder_constant(result), 1.01 * density_holder_bound(model))

    def test_holder_bound_needs_invertible_population(self):
        with self.assertRaises(PreconditionError):
            density_holder_bound(CovarianceModel(np.array([1.0, 0.0]), 0.5))
