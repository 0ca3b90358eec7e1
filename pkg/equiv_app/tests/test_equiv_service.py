import numpy as np
from django.test import SimpleTestCase

from equiv_app.equiv_service import (
    CovarianceModel, OmegaDomain, closed_form_identity_c, contraction_constant, deterministic_equivalent,
    fixed_point_bracket, functional_F, g_nu, g_nu_check, im_shift_identity, semi_metric, solution_record,
    solve_fixed_point, solve_fixed_point_batch, special_bound_real, stability_gap_bound,
)
from equiv_app.errors import DomainError, InapplicableBoundError, PreconditionError
from equiv_app.resolvents import as_spectral_parameter

GOLDEN = (1 + np.sqrt(5)) / 2


def identity_model(gamma, p=10):
    return CovarianceModel(np.ones(p), gamma)


class CovarianceModelTests(SimpleTestCase):
    def test_atoms_are_compressed(self):
        model = CovarianceModel(np.array([1.0, 2.0, 1.0, 1.0]), 0.5)
        np.testing.assert_array_equal(model.sigma_eigenvalues, [2.0, 1.0, 1.0, 1.0])
        np.testing.assert_array_equal(model.atoms, [1.0, 2.0])
        np.testing.assert_allclose(model.atom_weights, [0.75, 0.25])
        self.assertEqual(model.p, 4)
        self.assertAlmostEqual(model.n, 8)

    def test_validation(self):
        with self.assertRaises(PreconditionError):
            CovarianceModel(np.array([1.0, -1.0]), 1.0)
        with self.assertRaises(PreconditionError):
            CovarianceModel(np.ones(3), 0.0)


class FixedPointTests(SimpleTestCase):
    def test_golden_ratio_example(self):
        """Test c = -(1 + sqrt 5)/2 for Sigma = I, gamma = 1, z = -1"""
        solution = solve_fixed_point(identity_model(1.0), -1)
        self.assertAlmostEqual(solution.c.real, -GOLDEN, places=10)
        self.assertEqual(solution.c.imag, 0.0)

    def test_matches_closed_form_on_a_grid(self):
        """Test the solver against the quadratic root for Sigma = I on both branches"""
        for gamma in (0.25, 0.5, 1.0, 2.0, 4.0):
            model = identity_model(gamma)
            for z in (-0.5, -1.0, -3.0, 0.3 + 0.5j, -1 + 1j, 1.5 + 0.7j):
                solution = solve_fixed_point(model, z, tol=1e-14)
                expected = closed_form_identity_c(gamma, z)
                self.assertLess(abs(solution.c - expected), 1e-10 * abs(expected), (gamma, z))

    def test_unique_from_many_starts(self):
        model = CovarianceModel(np.array([0.5, 1.0, 2.0]), 0.7)
        rng = np.random.default_rng(0)
        for z in (-0.8, 0.6 + 0.4j):
            reference = solve_fixed_point(model, z).c
            for start in OmegaDomain(as_spectral_parameter(z)).sample(rng, 25):
                c = solve_fixed_point(model, z, start=start).c
                self.assertLess(abs(c - reference), 1e-9)

    def test_zero_sigma(self):
        """Test that Sigma = 0 gives c = z and g_nu = -1/z"""
        model = CovarianceModel(np.zeros(5), 0.5)
        solution = solve_fixed_point(model, -2)
        self.assertEqual(solution.c, -2)
        self.assertAlmostEqual(g_nu(model, solution, -2), 0.5)

    def test_real_branch_bracket(self):
        model = CovarianceModel(np.array([0.2, 1.0, 3.0]), 1.5)
        lo, hi = fixed_point_bracket(model, -1)
        c = solve_fixed_point(model, -1).c.real
        self.assertLessEqual(lo, c)
        self.assertLessEqual(c, hi)

    def test_contraction_estimate_below_constant(self):
        model = identity_model(0.5)
        solution = solve_fixed_point(model, -1, use_cache=False)
        self.assertLessEqual(solution.contraction_estimate, solution.kF_theoretical + 1e-6)

    def test_cached_solution_is_reused(self):
        model = identity_model(0.5)
        first = solve_fixed_point(model, -1)
        second = solve_fixed_point(model, -1)
        self.assertEqual(first.c, second.c)
        self.assertEqual(first.iterations, second.iterations)


class FunctionalTests(SimpleTestCase):
    def test_domain_is_enforced(self):
        with self.assertRaises(DomainError):
            functional_F(identity_model(1.0), 1.0, -1)
        with self.assertRaises(DomainError):
            functional_F(identity_model(1.0), 0.5 + 0.1j, 1j)

    def test_contraction_constants(self):
        self.assertAlmostEqual(contraction_constant(identity_model(1.0), -1), 0.25)
        self.assertAlmostEqual(contraction_constant(identity_model(1.0), 1j), 0.5)
        self.assertEqual(contraction_constant(CovarianceModel(np.zeros(2), 1.0), -1), 0.0)

    def test_semi_metric(self):
        self.assertAlmostEqual(semi_metric(1j, 2j), 1 / np.sqrt(2))
        with self.assertRaises(PreconditionError):
            semi_metric(1.0, 1j)

    def test_stability_bound(self):
        self.assertAlmostEqual(stability_gap_bound(0.5, 0.5, 1e-3), 4e-3)
        with self.assertRaises(InapplicableBoundError):
            stability_gap_bound(0.8, 0.5, 1e-3)

    def test_imaginary_shift_identity(self):
        """Test both sides of the imaginary shift identity at a few points of Omega"""
        model = CovarianceModel(np.array([0.3, 1.0, 2.0]), 0.8)
        z = 0.5 + 0.6j
        for l in (z, z * 1.5 + 0.2j, -1 + 2j):
            lhs, rhs, bound = im_shift_identity(model, l, z)
            self.assertAlmostEqual(lhs, rhs, places=12)
            self.assertLessEqual(lhs, bound)

    def test_special_bound_on_real_branch(self):
        model = identity_model(1.0)
        c = solve_fixed_point(model, -1).c
        self.assertLessEqual(special_bound_real(model, c, -1), 0.5 + 1e-12)
        with self.assertRaises(InapplicableBoundError):
            special_bound_real(model, c, 0.5 + 1j)


class EquivalentTests(SimpleTestCase):
    def test_check_transform_agrees_with_fixed_point(self):
        """Test g_check = (gamma - 1)/z + gamma g_nu = -1/c"""
        model = CovarianceModel(np.array([0.5, 1.0, 1.5, 2.0]), 1.7)
        for z in (-0.4, 0.9 + 0.3j):
            solution = solve_fixed_point(model, z)
            self.assertLess(abs(g_nu_check(model, solution, z) + 1 / solution.c), 1e-8)

    def test_equivalent_requires_matching_solution(self):
        model = identity_model(0.5)
        solution = solve_fixed_point(model, -1)
        G = deterministic_equivalent(model, solution, -1)
        np.testing.assert_allclose(np.diag(G), np.full(10, 1 / ((-1 / solution.c) - (-1))))
        with self.assertRaises(PreconditionError):
            deterministic_equivalent(identity_model(2.0), solution, -1)
        with self.assertRaises(PreconditionError):
            deterministic_equivalent(model, solution, -2)

    def test_solution_record(self):
        model = identity_model(1.0)
        record = solution_record(model, solve_fixed_point(model, -1))
        self.assertEqual(record['branch'], 'real_negative')
        self.assertAlmostEqual(record['c_re'], -GOLDEN, places=10)
        self.assertAlmostEqual(record['g_nu_re'], 1 / GOLDEN, places=10)


class BatchSolverTests(SimpleTestCase):
    def test_batch_matches_single_solves(self):
        """Test the vectorized solver against one-at-a-time solves near the real axis"""
        model = identity_model(0.5)
        zs = np.linspace(0.2, 2.5, 12) + 0.1j
        batch = solve_fixed_point_batch(model, zs)
        for z, c in zip(zs, batch.c):
            self.assertLess(abs(c - solve_fixed_point(model, z).c), 1e-8)
