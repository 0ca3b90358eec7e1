import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from equiv_app.cli import run


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self._directory = tempfile.TemporaryDirectory()
        self.output_dir = Path(self._directory.name)

    def tearDown(self):
        self._directory.cleanup()

    def call(self, name, **options):
        out = StringIO()
        call_command(name, stdout=out, stderr=StringIO(), output_dir=str(self.output_dir), **options)
        return out.getvalue()

    def write_file(self, name, text):
        path = self.output_dir / name
        path.write_text(text)
        return str(path)


class SolveCommandTests(CommandTestCase):
    def test_golden_ratio_record(self):
        record = json.loads(self.call('solve', gamma=1.0, z='-1'))
        self.assertAlmostEqual(record['c_re'], -1.6180339887, places=9)
        self.assertEqual(record['branch'], 'real_negative')
        self.assertEqual(list(record)[:3], ['z_re', 'z_im', 'branch'])

    def test_zero_is_rejected(self):
        with self.assertRaises(CommandError) as context:
            self.call('solve', gamma=1.0, z='0')
        self.assertEqual(context.exception.returncode, 1)
        self.assertIn('invalid spectral parameter', str(context.exception))

    def test_closed_form_check(self):
        record = json.loads(self.call('solve', gamma=0.5, z='0.5+1i', check=True))
        self.assertGreater(record['c_im'], 0)

    def test_check_needs_identity(self):
        with self.assertRaises(CommandError) as context:
            self.call('solve', gamma=0.5, z='-1', sigma='two-level:2,1', check=True)
        self.assertEqual(context.exception.returncode, 1)

    def test_config_file_overrides_flags(self):
        """Test that config-file values win over flags, with dashed keys accepted"""
        config = self.write_file('run.env', 'z=-2\nmax-iter=5000\n')
        record = json.loads(self.call('solve', gamma=1.0, z='-1', config=config))
        self.assertEqual(record['z_re'], -2.0)

    def test_unknown_config_key(self):
        config = self.write_file('run.env', 'bogus=1\n')
        with self.assertRaises(CommandError) as context:
            self.call('solve', gamma=1.0, z='-1', config=config)
        self.assertIn('unknown keys: bogus', str(context.exception))

    def test_missing_config_file(self):
        with self.assertRaises(CommandError):
            self.call('solve', gamma=1.0, z='-1', config=str(self.output_dir / 'absent.env'))


class FreeconvCommandTests(CommandTestCase):
    def test_writes_density_and_cdf(self):
        summary = json.loads(self.call('freeconv', gamma=0.5, p=20, gnuplot=True))
        self.assertAlmostEqual(summary['atom_at_zero'], 0.0, delta=5e-3)
        self.assertAlmostEqual(summary['total_mass'], 1.0, delta=5e-3)
        header = (self.output_dir / 'density.csv').read_text().splitlines()[0]
        self.assertEqual(header, 'x,f,atom0')
        self.assertTrue((self.output_dir / 'cdf.csv').is_file())
        self.assertIn("'density.csv'", (self.output_dir / 'plot.gp').read_text())

    def test_bad_eps_schedule(self):
        with self.assertRaises(CommandError) as context:
            self.call('freeconv', gamma=0.5, eps='1e-3,1e-2')
        self.assertIn('descending', str(context.exception))


class SimulateCommandTests(CommandTestCase):
    def test_reruns_are_byte_identical(self):
        self.call('simulate', p=10, n=20, replicas=2, seed=4, dump_matrix=True)
        first = (self.output_dir / 'spectrum_1.csv').read_bytes()
        matrix = (self.output_dir / 'matrix_1.speqmat').read_bytes()
        self.call('simulate', p=10, n=20, replicas=2, seed=4, dump_matrix=True, threads=2)
        self.assertEqual((self.output_dir / 'spectrum_1.csv').read_bytes(), first)
        self.assertEqual((self.output_dir / 'matrix_1.speqmat').read_bytes(), matrix)

    def test_limits(self):
        with self.assertRaises(CommandError) as context:
            self.call('simulate', p=10, n=20, replicas=1000)
        self.assertIn('SPEQ_MAX_REPLICAS', str(context.exception))

    def test_documented_config_keys(self):
        """Test that a run file with dotted dist.* keys drives the simulator"""
        config = self.write_file(
            'run.env',
            'p=4\nn=8\ndist.kind=gaussian\ndist.sigma.eigenvalues=4,1,1,1\ndist.mean_norm=2\n'
            'dist.mean=2,0,0,0\nseed=3\nreplicas=1\n',
        )
        summary = json.loads(self.call('simulate', config=config))
        self.assertEqual((summary['p'], summary['n']), (4, 8))
        self.assertEqual(summary['kind'], 'gaussian')
        self.assertEqual(summary['mean_norm'], 2.0)
        self.assertTrue((self.output_dir / 'spectrum_0.csv').is_file())

    def test_mean_above_declared_bound(self):
        with self.assertRaises(CommandError) as context:
            self.call('simulate', p=4, n=8, dist_mean='3,0,0,0', dist_mean_norm=1.0)
        self.assertEqual(context.exception.returncode, 1)
        self.assertIn('exceeds the declared bound', str(context.exception))

    def test_mean_length_must_match_p(self):
        with self.assertRaises(CommandError) as context:
            self.call('simulate', p=4, n=8, dist_mean='1,0', dist_mean_norm=1.0)
        self.assertIn('expected p=4', str(context.exception))


class RidgeCommandTests(CommandTestCase):
    def test_eigenvalue_file(self):
        kernel = self.write_file('eigenvalues.csv', '1\n')
        report = json.loads(self.call('ridge', kernel=kernel, features=1, ridge=1.0))
        self.assertEqual(list(report), ['lambda', 'lambda_tilde'])
        self.assertAlmostEqual(report['lambda_tilde'], 1.6180339887, places=9)
        self.assertTrue((self.output_dir / 'ridge.json').is_file())

    def test_kernel_matrix_without_test_points(self):
        kernel = self.write_file('kernel.csv', '2,0\n0,2\n')
        labels = self.write_file('labels.csv', '1\n-1\n')
        report = json.loads(self.call('ridge', kernel=kernel, labels=labels, features=2, ridge=1.0))
        self.assertAlmostEqual(report['lambda_tilde'], 2.0, places=9)

    def test_needs_a_problem(self):
        with self.assertRaises(CommandError) as context:
            self.call('ridge')
        self.assertEqual(context.exception.returncode, 1)


class SweepCommandTests(CommandTestCase):
    def test_verify_writes_rows(self):
        """Test that verify always leaves verify.csv behind, passing or not"""
        try:
            self.call('verify', nmin=16, nmax=128, replicas=8)
        except CommandError as e:
            self.assertEqual(e.returncode, 2)
        header = (self.output_dir / 'verify.csv').read_text().splitlines()[0]
        self.assertEqual(header, 'name,n,value,stderr,bound,ratio')

    def test_verify_passes_for_zero_population(self):
        """Test that Sigma = 0, where every gap is exactly zero, exits cleanly"""
        summary = json.loads(self.call('verify', sigma='zero', nmin=16, nmax=128, replicas=8))
        self.assertTrue(summary['passed'])
        self.assertIsNone(summary['gap_slope'])
        self.assertEqual(summary['a_in_omega'], 1.0)
        self.assertEqual(summary['hierarchy_fraction'], 1.0)

    def test_sweep_needs_four_points(self):
        with self.assertRaises(CommandError) as context:
            self.call('kolmogorov', nmin=128, nmax=512)
        self.assertIn('fewer than 4', str(context.exception))


class RunTests(SimpleTestCase):
    def test_unknown_command_exit_code(self):
        self.assertEqual(run(['manage.py', 'no_such_command']), 1)
