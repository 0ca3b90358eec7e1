import numpy as np
from django.test import SimpleTestCase

from equiv_app.errors import (
    DimensionError, PreconditionError, SingularUpdateError, SpectralParameterError,
)
from equiv_app.resolvents import (
    Branch, DataMatrix, SpectralParameter, check_im_identities, check_loo_identities,
    co_resolvent, co_resolvent_identity_residual, concentration_scale, lipschitz_probe,
    loo_parameter, resolvent, resolvent_bounds, resolvent_view, sample_covariance,
    sherman_morrison_update, symmetric_eigh, vesd_transform,
)


def random_matrix(p, n, seed=0):
    return np.random.default_rng(seed).standard_normal((p, n))


class SpectralParameterTests(SimpleTestCase):
    def test_branches(self):
        """Test that the branch and eta follow from the value"""
        real = SpectralParameter.from_value(-2)
        self.assertEqual(real.branch, Branch.REAL_NEGATIVE)
        self.assertAlmostEqual(real.eta, 0.5)
        upper = SpectralParameter.from_value(0.5 + 2j)
        self.assertEqual(upper.branch, Branch.UPPER_HALF)
        self.assertAlmostEqual(upper.eta, 0.5)

    def test_invalid_values(self):
        for value in (0, 1, 1 - 1j, complex('nan')):
            with self.assertRaises(SpectralParameterError):
                SpectralParameter.from_value(value)

    def test_eta_times_modulus_at_least_one(self):
        for value in (-0.1, -5, 3 + 0.1j, -4 + 1j, 1j):
            z = SpectralParameter.from_value(value)
            self.assertGreaterEqual(z.eta * abs(z.value), 1.0 - 1e-12)


class DataMatrixTests(SimpleTestCase):
    def test_shape_and_finiteness(self):
        with self.assertRaises(DimensionError):
            DataMatrix(np.ones(3))
        with self.assertRaises(PreconditionError):
            DataMatrix(np.array([[1.0, np.nan]]))
        X = DataMatrix(random_matrix(3, 6))
        self.assertEqual((X.p, X.n), (3, 6))
        self.assertAlmostEqual(X.gamma, 0.5)
        with self.assertRaises(PreconditionError):
            X.column(6)


class ResolventTests(SimpleTestCase):
    def test_zero_matrix(self):
        """Test that the resolvent of 0 at z = -1 is the identity"""
        np.testing.assert_allclose(resolvent(np.zeros((4, 4)), -1), np.eye(4))

    def test_matches_dense_inverse(self):
        K = sample_covariance(random_matrix(5, 8, seed=1))
        for z in (-0.7, 0.3 + 0.8j):
            expected = np.linalg.inv(K - z * np.eye(5))
            np.testing.assert_allclose(resolvent(K, z), expected, atol=1e-12)

    def test_view_operations(self):
        K = sample_covariance(random_matrix(6, 10, seed=2))
        view = resolvent_view(K, 0.2 + 0.5j)
        G = view.materialize()
        u = np.arange(6.0)
        B = np.random.default_rng(3).standard_normal((6, 2))
        self.assertAlmostEqual(view.trace(), np.trace(G))
        self.assertAlmostEqual(view.quadratic_form(u), u @ G @ u)
        np.testing.assert_allclose(view.apply(B), G @ B, atol=1e-12)
        self.assertAlmostEqual(view.spectral_norm(), np.linalg.norm(G, 2))

    def test_eigh_rejects_bad_input(self):
        with self.assertRaises(PreconditionError):
            symmetric_eigh(np.diag([1.0, -1.0]))
        with self.assertRaises(PreconditionError):
            symmetric_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with self.assertRaises(DimensionError):
            symmetric_eigh(np.ones((2, 3)))


class LeaveOneOutTests(SimpleTestCase):
    def test_identities_hold_on_both_branches(self):
        """Test the three leave-one-out identities on random cases"""
        rng = np.random.default_rng(4)
        for case in range(20):
            p, n = rng.integers(2, 9, size=2)
            X = rng.standard_normal((p, n))
            z = -rng.uniform(0.1, 3) if case % 2 else complex(rng.uniform(-2, 3), rng.uniform(0.1, 2))
            report = check_loo_identities(X, int(rng.integers(n)), z)
            self.assertTrue(report.passed, report.as_dict())

    def test_loo_parameter_is_minus_inverse_co_resolvent_diagonal(self):
        X = random_matrix(5, 7, seed=5)
        for z in (-1.0, 0.4 + 0.6j):
            a = loo_parameter(X, 2, z)
            expected = -1.0 / co_resolvent(X, z)[2, 2]
            self.assertLess(abs(a - expected), 1e-9 * abs(expected))

    def test_co_resolvent_identity(self):
        X = random_matrix(4, 9, seed=6)
        for z in (-0.5, 1 + 1j):
            self.assertLess(co_resolvent_identity_residual(X, z), 1e-9)


class RankOneTests(SimpleTestCase):
    def test_sherman_morrison_matches_inverse(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((5, 5))
        M = np.eye(5) + A @ A.T
        u, v = rng.standard_normal(5), rng.standard_normal(5)
        updated = sherman_morrison_update(np.linalg.inv(M), u, v)
        np.testing.assert_allclose(updated, np.linalg.inv(M + np.outer(u, v)), atol=1e-9)

    def test_singular_update(self):
        e1 = np.eye(3)[0]
        with self.assertRaises(SingularUpdateError):
            sherman_morrison_update(np.eye(3), e1, -e1)


class SpectralIdentityTests(SimpleTestCase):
    def test_vesd_transform(self):
        """Test the eigenvector ESD transform against a diagonal example"""
        K = np.diag([1.0, 2.0, 3.0])
        self.assertAlmostEqual(vesd_transform(K, np.eye(3)[0], -1), 0.5)
        with self.assertRaises(PreconditionError):
            vesd_transform(K, np.ones(3), -1)

    def test_imaginary_part_identities(self):
        K = sample_covariance(random_matrix(6, 9, seed=8))
        self.assertTrue(check_im_identities(K, 0.2 + 0.5j).passed)
        with self.assertRaises(PreconditionError):
            check_im_identities(K, -1)

    def test_norm_bounds(self):
        X = random_matrix(8, 12, seed=9)
        for z in (-0.3, 0.5 + 0.4j):
            bounds = resolvent_bounds(X, z)
            self.assertLessEqual(bounds['norm_g'], bounds['bound_g'] * (1 + 1e-12))
            self.assertLessEqual(bounds['norm_gx'], bounds['bound_gx'])

    def test_lipschitz_probe(self):
        X = random_matrix(6, 10, seed=10)
        H = 1e-6 * random_matrix(6, 10, seed=11)
        observed, bound = lipschitz_probe(X, H, -1)
        self.assertLessEqual(observed, bound)

    def test_concentration_scale(self):
        scales = concentration_scale(-1, 100)
        self.assertAlmostEqual(scales['tau_scale'], 0.1)
        self.assertAlmostEqual(scales['lipschitz_scale'], 0.1)
