import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from equiv_app.errors import ConfigError, PreconditionError
from equiv_app.simulation_service import (
    ColumnDistribution, ColumnKind, LipschitzMap, RunConfig, concentration_probe, dump_matrix,
    effective_covariance, empirical_g, load_matrix, nested_block_distance, sample_matrix, sample_replicas,
    spectral_norm_check,
)


def identity_config(p=20, n=40, kind=ColumnKind.GAUSSIAN_LINEAR, replicas=4, seed=7):
    return RunConfig(p=p, n=n, distribution=ColumnDistribution(kind, np.ones(p)), seed=seed, replicas=replicas)


class SamplingTests(SimpleTestCase):
    def test_replicas_do_not_depend_on_thread_count(self):
        """Test that one and four worker threads give bit-identical replicas"""
        config = identity_config()
        serial = sample_replicas(config, threads=1)
        parallel = sample_replicas(config, threads=4)
        for first, second in zip(serial, parallel):
            np.testing.assert_array_equal(first.entries, second.entries)

    def test_replicas_differ(self):
        config = identity_config()
        self.assertFalse(np.array_equal(sample_matrix(config, 0).entries, sample_matrix(config, 1).entries))

    def test_rademacher_entries(self):
        X = sample_matrix(identity_config(kind=ColumnKind.RADEMACHER_LINEAR), 0)
        self.assertTrue(np.all(np.abs(X.entries) == 1.0))

    def test_lipschitz_map_has_unit_variance(self):
        values = LipschitzMap('tanh', 2.0)(np.random.default_rng(3).standard_normal(200000))
        self.assertAlmostEqual(float(np.var(values)), 1.0, delta=0.02)

    def test_mean_is_added(self):
        mean = np.full(4, 0.5)
        distribution = ColumnDistribution(ColumnKind.GAUSSIAN_LINEAR, np.zeros(4), mean=mean, mean_norm=1.0)
        X = sample_matrix(RunConfig(p=4, n=8, distribution=distribution, seed=1), 0)
        np.testing.assert_array_equal(X.entries, np.tile(mean[:, None], (1, 8)))


class ConfigErrorTests(SimpleTestCase):
    def test_run_config_checks(self):
        distribution = ColumnDistribution(ColumnKind.GAUSSIAN_LINEAR, np.ones(3))
        with self.assertRaises(ConfigError):
            RunConfig(p=4, n=8, distribution=distribution, seed=1)
        with self.assertRaises(ConfigError):
            RunConfig(p=3, n=100, distribution=distribution, seed=1)
        with self.assertRaises(ConfigError):
            RunConfig(p=3, n=6, distribution=distribution, seed=-1)

    def test_distribution_checks(self):
        with self.assertRaises(ConfigError):
            LipschitzMap('cube')
        with self.assertRaises(PreconditionError):
            ColumnDistribution(ColumnKind.GAUSSIAN_LINEAR, np.ones(2), mean=np.ones(2), mean_norm=1.0)
        with self.assertRaises(PreconditionError):
            ColumnDistribution(ColumnKind.GAUSSIAN_LINEAR, np.ones(2), basis=np.ones((2, 2)))
        with self.assertRaises(PreconditionError):
            sample_matrix(identity_config(), -1)


class DiagnosticsTests(SimpleTestCase):
    def test_spectral_norm_check(self):
        report = spectral_norm_check(identity_config(p=50, n=200))
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.bound, 3.25)

    def test_effective_covariance_of_lipschitz_columns(self):
        distribution = ColumnDistribution(ColumnKind.LIPSCHITZ_GAUSSIAN_FEATURE, np.ones(5))
        eigenvalues = effective_covariance(distribution, 20000, seed=11)
        np.testing.assert_allclose(eigenvalues, np.ones(5), atol=0.08)

    def test_concentration_probe(self):
        probe = concentration_probe(ColumnDistribution(ColumnKind.GAUSSIAN_LINEAR, np.ones(20)), seed=5)
        self.assertTrue(probe.passed)

    def test_nested_block_interlacing(self):
        """Test that dropping p - p' coordinates moves the ESD by at most (p - p')/p"""
        delta, bound = nested_block_distance(40, 30, 80, seed=2)
        self.assertAlmostEqual(bound, 0.25)
        self.assertLessEqual(delta, bound + 1e-12)
        with self.assertRaises(PreconditionError):
            nested_block_distance(10, 11, 20, seed=2)


    def test_empirical_g_is_normalized_resolvent_trace(self):
        X = sample_matrix(identity_config(), 0)
        K = X.entries @ X.entries.T / X.entries.shape[1]
        expected = np.trace(np.linalg.inv(K - (0.5 + 0.5j) * np.eye(K.shape[0]))) / K.shape[0]
        self.assertAlmostEqual(empirical_g(X, 0.5 + 0.5j), expected, places=10)


class MatrixDumpTests(SimpleTestCase):
    def test_dump_and_load(self):
        X = sample_matrix(identity_config(p=3, n=5), 0)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'matrix.speqmat'
            dump_matrix(X, path)
            self.assertEqual(path.read_bytes()[:8], b'SPEQMAT1')
            np.testing.assert_array_equal(load_matrix(path).entries, X.entries)

    def test_rejects_foreign_files(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'matrix.speqmat'
            path.write_bytes(b'NOTAMATRIX' * 4)
            with self.assertRaises(ConfigError):
                load_matrix(path)
