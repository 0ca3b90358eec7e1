import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings

from equiv_app.errors import ConfigError, SpectralParameterError
from equiv_app.utils import (
    get_stable_hash, parse_complex, parse_sigma_spec, read_matrix, render_json, resolve_threads, run_parallel,
    write_csv,
)


class ParsingTests(SimpleTestCase):
    def test_parse_complex_accepts_i_suffix(self):
        """Test that the mathematician's i is understood"""
        self.assertEqual(parse_complex('0.3+0.7i'), 0.3 + 0.7j)
        self.assertEqual(parse_complex('2i'), 2j)
        self.assertEqual(parse_complex('-1'), -1 + 0j)

    def test_parse_complex_rejects_garbage(self):
        with self.assertRaises(SpectralParameterError):
            parse_complex('minus one')

    def test_sigma_specs(self):
        """Test that every sigma spec gives descending eigenvalues"""
        np.testing.assert_array_equal(parse_sigma_spec('identity', 3), [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(parse_sigma_spec('zero', 2), [0.0, 0.0])
        np.testing.assert_array_equal(parse_sigma_spec('diag:3,1,2', None), [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(parse_sigma_spec('two-level:2,1', 5), [2.0, 2.0, 2.0, 1.0, 1.0])
        np.testing.assert_allclose(parse_sigma_spec('uniform:0.5,1', 3), [1.0, 0.75, 0.5])

    def test_sigma_spec_errors(self):
        with self.assertRaises(ConfigError):
            parse_sigma_spec('spiked:1', 4)
        with self.assertRaises(ConfigError):
            parse_sigma_spec('diag:1,-1', None)
        with self.assertRaises(ConfigError):
            parse_sigma_spec('diag:1,2', 3)


class HashTests(SimpleTestCase):
    def test_stable_hash(self):
        """Test that equal inputs hash equally and different ones do not"""
        a = np.array([1.0, 2.0])
        self.assertEqual(get_stable_hash(a, 0.5), get_stable_hash(a.copy(), 0.5))
        self.assertNotEqual(get_stable_hash(a, 0.5), get_stable_hash(a, 0.25))
        self.assertNotEqual(get_stable_hash(a), get_stable_hash(np.array([1.0, 2.5])))


class OutputTests(SimpleTestCase):
    def test_write_csv_format(self):
        """Test that floats are written with a fixed format"""
        with tempfile.TemporaryDirectory() as directory:
            path = write_csv(Path(directory) / 'out.csv', {'n': [1, 2], 'value': [0.1, 1 / 3]})
            self.assertEqual(path.read_text(), 'n,value\n1,0.1\n2,0.333333333333\n')

    def test_read_matrix(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'k.csv'
            path.write_text('1,0\n0,2\n')
            np.testing.assert_array_equal(read_matrix(path), [[1.0, 0.0], [0.0, 2.0]])
            with self.assertRaises(ConfigError):
                read_matrix(Path(directory) / 'missing.csv')

    def test_render_json_maps_nan_to_null(self):
        self.assertEqual(render_json({'a': float('nan'), 'b': [1.5]}), b'{"a":null,"b":[1.5]}')


class WorkerPoolTests(SimpleTestCase):
    def test_results_keep_input_order(self):
        """Test that the thread pool returns results in input order"""
        items = list(range(50))
        self.assertEqual(run_parallel(lambda x: x * x, items, threads=4), [x * x for x in items])

    @override_settings(SPEQ_THREADS=3)
    def test_thread_count_falls_back_to_setting(self):
        self.assertEqual(resolve_threads(), 3)
        self.assertEqual(resolve_threads(2), 2)

    def test_invalid_thread_count(self):
        with self.assertRaises(ConfigError):
            run_parallel(lambda x: x, [1], threads=0)
