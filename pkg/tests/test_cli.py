import io
import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

from cli import _plain, main
from error_handlers import MissingInputError
from models import GridSpec
from raster_io import write_grid
from run_config import load_run_config

SCENARIO = {
    'ncols': 40, 'nrows': 40, 'xll_deg': 10.0, 'yll_deg': 0.0, 'cellsize_deg': 0.005,
    'start': '2010-01', 'months': 48, 'onset': '2013-01', 'n_sites': 2,
    'noise_sd_degC': 0.3, 'population': {'cellsize_deg': 0.001, 'factor': 10, 'towns': 2},
}

RUN_CONFIG = {
    'k': 24, 'horizon': 6, 'r_max_km': 4.0, 'dr_km': 1.0, 'k_list': [12, 24],
    'climatology_window': ['2010-01', '2012-12'], 'density_threshold': 100000.0,
    'scenario': SCENARIO,
}

ARTIFACTS = [
    'synth/manifest.json', 'synth/sites.csv', 'synth/population.asc',
    'preprocess/manifest.json', 'preprocess/sites_kept.csv', 'preprocess/site_diagnostics.csv',
    'preprocess/preprocess_summary.json',
    'epoch/epoch_band.csv', 'epoch/epoch_sites.csv', 'epoch/table_sweep.csv', 'epoch/epoch_summary.json',
    'radial/radial_profile.csv', 'radial/site_profiles.csv', 'radial/decay_metrics.json',
    'exposure/exposure_histogram.csv', 'exposure/exposure_summary.json',
    'report/epoch_band.svg', 'report/radial_profile.svg', 'report/exposure_histogram.svg',
]


def run_cli(argv):
    """Run main() and return (exit code, error payload or None)"""
    stderr = io.StringIO()
    with patch('sys.stderr', stderr):
        code = main(argv)
    payload = None
    for line in reversed(stderr.getvalue().splitlines()):
        if line.startswith('{'):
            payload = json.loads(line)
            break
    return code, payload


def tree_bytes(root):
    root = Path(root)
    return {str(path.relative_to(root)): path.read_bytes() for path in sorted(root.rglob('*'))
            if path.is_file() and path.name != 'effective_config.json'}


class TestPipelineRun(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.config_path = cls.root / 'config.json'
        cls.config_path.write_text(json.dumps(RUN_CONFIG), encoding='utf-8')
        cls.out = cls.root / 'out'
        cls.code, cls.payload = run_cli(['run', '--config', str(cls.config_path), '--out-dir', str(cls.out)])

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_run_succeeds(self):
        """The whole chain exits 0 and writes every stage's files."""
        self.assertEqual(self.code, 0, self.payload)
        for name in ARTIFACTS:
            self.assertTrue((self.out / name).is_file(), name)

    def test_epoch_band_columns(self):
        """Band CSV carries the quantile labels of the chosen band."""
        frame = pd.read_csv(self.out / 'epoch' / 'epoch_band.csv')
        self.assertEqual(list(frame.columns), ['i', 'mean', 'min', 'max', 'p2.5', 'p97.5', 'n_sites'])
        self.assertEqual(frame['i'].tolist(), list(range(-6, 7)))

    def test_headline_recovers_step(self):
        with open(self.out / 'epoch' / 'epoch_summary.json', encoding='utf-8') as f:
            summary = json.load(f)
        self.assertEqual(summary['n_sites'], 2)
        self.assertAlmostEqual(summary['average_degC'], 2.0, delta=0.5)

    def test_sweep_rows(self):
        frame = pd.read_csv(self.out / 'epoch' / 'table_sweep.csv')
        self.assertEqual(frame['k'].tolist(), [12, 24])
        self.assertEqual(list(frame.columns), ['k', 'average', 'minimum', 'maximum', 'n_sites'])

    def test_effective_config_echo(self):
        """Each stage echoes the merged configuration without the worker count."""
        with open(self.out / 'epoch' / 'effective_config.json', encoding='utf-8') as f:
            echoed = json.load(f)
        self.assertEqual(echoed['k'], 24)
        self.assertEqual(echoed['out_dir'], str(self.out))
        self.assertNotIn('workers', echoed)

    def test_rerun_is_byte_identical(self):
        """Reruns with another worker count reproduce every result file."""
        again = self.root / 'again'
        code, payload = run_cli(['run', '--config', str(self.config_path), '--out-dir', str(again),
                                 '--workers', '3'])
        self.assertEqual(code, 0, payload)
        first, second = tree_bytes(self.out), tree_bytes(again)
        self.assertEqual(sorted(first), sorted(second))
        for name in first:
            self.assertEqual(first[name], second[name], name)

    def test_stage_rerun_reads_previous_outputs(self):
        code, payload = run_cli(['radial', '--config', str(self.config_path), '--out-dir', str(self.out)])
        self.assertEqual(code, 0, payload)

    def test_exposure_rejects_other_rings(self):
        """Exposure refuses profiles computed with a different r_max."""
        code, payload = run_cli(['exposure', '--config', str(self.config_path), '--out-dir', str(self.out),
                                 '--population-grid', str(self.out / 'synth' / 'population.asc'),
                                 '--r-max-km', '6'])
        self.assertEqual(code, 3)
        self.assertEqual(payload['field'], 'r_max_km')


class TestExitCodes(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_epoch_without_preprocess(self):
        """Missing upstream output is exit code 2."""
        code, payload = run_cli(['epoch', '--out-dir', str(self.root / 'out')])
        self.assertEqual(code, 2)
        self.assertIn('error', payload)

    def test_missing_config_file(self):
        code, _ = run_cli(['epoch', '--config', str(self.root / 'absent.json')])
        self.assertEqual(code, 2)

    def test_corrupt_manifest_names_field(self):
        """A schema violation in the manifest is exit code 3 and names the field."""
        spec = GridSpec(2, 2, 0.0, 0.0, 1.0)
        write_grid(self.root / 'a.asc', np.ones(spec.shape), spec)
        manifest = {'variable': 'LST', 'units': 'degC', 'cadence': 'monthly',
                    'spec': dict(spec.to_dict(), ncols=0), 'timeline': ['2010-01'], 'files': ['a.asc']}
        (self.root / 'manifest.json').write_text(json.dumps(manifest), encoding='utf-8')
        (self.root / 'sites.csv').write_text("site_id,lat_deg,lon_deg,start_of_operations\nA,1,1,2010-01\n",
                                             encoding='utf-8')
        code, payload = run_cli(['preprocess', '--stack-manifest', str(self.root / 'manifest.json'),
                                 '--sites-csv', str(self.root / 'sites.csv'), '--out-dir', str(self.root / 'out')])
        self.assertEqual(code, 3)
        self.assertEqual(payload['field'], 'spec.ncols')

    def test_no_valid_sites(self):
        """When every site lacks history the downstream stages exit 4."""
        config_path = self.root / 'config.json'
        config_path.write_text(json.dumps(RUN_CONFIG), encoding='utf-8')
        out = self.root / 'out'
        code, payload = run_cli(['synth', '--config', str(config_path), '--out-dir', str(out)])
        self.assertEqual(code, 0, payload)
        early = self.root / 'early.csv'
        early.write_text("site_id,lat_deg,lon_deg,start_of_operations\nE1,0.1,10.1,2010-03\n", encoding='utf-8')
        code, payload = run_cli(['preprocess', '--config', str(config_path), '--out-dir', str(out),
                                 '--stack-manifest', str(out / 'synth' / 'manifest.json'),
                                 '--sites-csv', str(early)])
        self.assertEqual(code, 0, payload)
        with open(out / 'preprocess' / 'preprocess_summary.json', encoding='utf-8') as f:
            summary = json.load(f)
        self.assertEqual(summary['sites_valid'], 0)
        self.assertEqual(summary['excluded_by_reason'], {'insufficient-history': 1})
        code, payload = run_cli(['epoch', '--config', str(config_path), '--out-dir', str(out)])
        self.assertEqual(code, 4)
        self.assertEqual(payload['error'], 'insufficient-history')

    def test_bad_flag_value(self):
        code, payload = run_cli(['epoch', '--k', 'abc'])
        self.assertEqual(code, 3)
        self.assertEqual(payload['field'], 'argv')

    def test_unknown_command(self):
        code, _ = run_cli(['summarize'])
        self.assertEqual(code, 3)

    def test_out_of_range_override(self):
        code, payload = run_cli(['epoch', '--k', '0', '--out-dir', str(self.root / 'out')])
        self.assertEqual(code, 3)
        self.assertEqual(payload['field'], 'k')


class TestRunConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'config.json'
        self.path.write_text(json.dumps({'k': 36, 'out_dir': 'from_file'}), encoding='utf-8')

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_run_config()
        self.assertEqual((config.k, config.horizon, config.dr_km, config.r_max_km), (60, 10, 1.0, 10.0))
        self.assertEqual(config.k_list, [12, 24, 36, 120])
        self.assertEqual(config.out_dir, 'heatring_out')

    def test_precedence(self):
        """File < HEATRING_OUT < command-line flags."""
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(load_run_config(self.path).out_dir, 'from_file')
        with patch.dict(os.environ, {'HEATRING_OUT': 'from_env'}):
            config = load_run_config(self.path)
            self.assertEqual((config.out_dir, config.k), ('from_env', 36))
            config = load_run_config(self.path, {'out_dir': 'from_flag', 'k': None})
            self.assertEqual((config.out_dir, config.k), ('from_flag', 36))

    def test_require_names_missing_path(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_run_config()
        with self.assertRaises(MissingInputError) as ctx:
            config.require('stack_manifest')
        self.assertEqual(ctx.exception.field, 'stack_manifest')


class TestResultFormatting(unittest.TestCase):
    def test_plain_values(self):
        self.assertEqual(_plain({'a': float('nan'), 'b': np.float64(1.0 / 3.0), 'c': np.int64(4), 'd': [np.inf]}),
                         {'a': None, 'b': 0.333333333, 'c': 4, 'd': [None]})


if __name__ == '__main__':
    unittest.main()
