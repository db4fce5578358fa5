import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from error_handlers import (MissingInputError, MissingPeriodError, ParseError, SiteRegistryError, SpecMismatchError,
                            TimelineGapError, TimelineOrderError, ValidationError)
from models import GeoPoint, GridSpec, RasterStack, SiteRecord, month_range
from raster_io import (format_grid, load_grid, load_manifest, load_sites, load_stack, parse_grid, write_grid,
                       write_sites, write_stack)

GRID_1X1 = "NCOLS 1\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n5.0\n"


class TestGridFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_cell(self):
        values, spec = parse_grid(GRID_1X1)
        self.assertEqual(values.shape, (1, 1))
        self.assertEqual(values[0, 0], 5.0)
        self.assertEqual((spec.ncols, spec.nrows, spec.cellsize_deg), (1, 1, 1.0))

    def test_header_keys_case_insensitive(self):
        values, spec = parse_grid(GRID_1X1.replace('NCOLS', 'ncols').replace('CELLSIZE', 'CellSize'))
        self.assertEqual(spec.ncols, 1)

    def test_nodata_cells_become_nan(self):
        text = "NCOLS 2\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n-9999 3.5\n"
        values, _ = parse_grid(text)
        self.assertTrue(math.isnan(values[0, 0]))
        self.assertEqual(values[0, 1], 3.5)

    def test_non_numeric_token_names_line_and_column(self):
        text = "NCOLS 3\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n1 2 3\n4 x 6\n"
        with self.assertRaises(ParseError) as ctx:
            parse_grid(text, 'bad.asc')
        self.assertEqual((ctx.exception.line, ctx.exception.column), (8, 2))
        self.assertIn('bad.asc:8:2', ctx.exception.message)

    def test_wrong_cell_count(self):
        text = "NCOLS 3\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n1 2\n"
        with self.assertRaises(ParseError) as ctx:
            parse_grid(text)
        self.assertEqual(ctx.exception.line, 7)

    def test_malformed_header(self):
        with self.assertRaises(ParseError) as ctx:
            parse_grid(GRID_1X1.replace('CELLSIZE 1', 'CELLSIZE one'))
        self.assertEqual(ctx.exception.line, 5)

    def test_round_trip_is_exact(self):
        spec = GridSpec(4, 3, 10.25, -5.5, 0.005, -9999.0)
        values = np.random.default_rng(3).normal(20.0, 7.0, spec.shape)
        values[1, 2] = np.nan
        path = self.dir / 'grid.asc'
        write_grid(path, values, spec)
        loaded, loaded_spec = load_grid(path)
        np.testing.assert_array_equal(loaded, values)
        self.assertEqual(loaded_spec, spec)

    def test_format_rejects_shape_mismatch(self):
        with self.assertRaises(SpecMismatchError):
            format_grid(np.zeros((2, 2)), GridSpec(3, 2, 0.0, 0.0, 1.0))

    def test_missing_file(self):
        with self.assertRaises(MissingInputError):
            load_grid(self.dir / 'absent.asc')


class TestStacks(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.spec = GridSpec(3, 2, 0.0, 0.0, 0.5)

    def tearDown(self):
        self.tmp.cleanup()

    def write_manifest(self, **overrides):
        document = {
            'variable': 'LST', 'units': 'degC', 'cadence': 'monthly', 'spec': self.spec.to_dict(),
            'timeline': ['2010-01', '2010-02', '2010-03'],
            'files': ['a.asc', 'b.asc', 'c.asc'],
        }
        document.update(overrides)
        for name in document['files']:
            if not (self.dir / name).exists():
                write_grid(self.dir / name, np.ones(self.spec.shape), self.spec)
        path = self.dir / 'manifest.json'
        path.write_text(json.dumps(document), encoding='utf-8')
        return path

    def test_three_consistent_months(self):
        stack = load_stack(self.write_manifest())
        self.assertEqual(len(stack), 3)
        self.assertEqual(stack.values.shape, (3, 2, 3))

    def test_spec_mismatch_names_file(self):
        write_grid(self.dir / 'b.asc', np.ones((2, 4)), GridSpec(4, 2, 0.0, 0.0, 0.5))
        with self.assertRaises(SpecMismatchError) as ctx:
            load_stack(self.write_manifest())
        self.assertIn('b.asc', ctx.exception.message)

    def test_timeline_disorder(self):
        with self.assertRaises(TimelineOrderError):
            load_stack(self.write_manifest(timeline=['2010-02', '2010-01'], files=['a.asc', 'b.asc']))

    def test_gap_needs_flag(self):
        gapped = dict(timeline=['2010-01', '2010-03'], files=['a.asc', 'c.asc'])
        with self.assertRaises(TimelineGapError):
            load_stack(self.write_manifest(**gapped))
        stack = load_stack(self.write_manifest(gaps_allowed=True, **gapped))
        dense = stack.densify()
        self.assertEqual(dense.timeline, ['2010-01', '2010-02', '2010-03'])
        self.assertTrue(np.all(np.isnan(dense.values[1])))

    def test_missing_period_file(self):
        path = self.write_manifest()
        (self.dir / 'c.asc').unlink()
        with self.assertRaises(MissingPeriodError) as ctx:
            load_stack(path)
        self.assertIn('2010-03', ctx.exception.message)

    def test_schema_error_names_field(self):
        spec = dict(self.spec.to_dict(), ncols=0)
        with self.assertRaises(ValidationError) as ctx:
            load_manifest(self.write_manifest(spec=spec))
        self.assertEqual(ctx.exception.field, 'spec.ncols')

    def test_corrupt_json(self):
        path = self.dir / 'manifest.json'
        path.write_text('{"variable": "LST",', encoding='utf-8')
        with self.assertRaises(ParseError):
            load_manifest(path)

    def test_write_then_load_is_identity(self):
        values = np.random.default_rng(11).normal(15.0, 3.0, (4,) + self.spec.shape)
        values[2, 0, 1] = np.nan
        stack = RasterStack(self.spec, month_range('2011-11', 4), values)
        write_stack(self.dir / 'out' / 'manifest.json', stack)
        loaded = load_stack(self.dir / 'out' / 'manifest.json', workers=3)
        self.assertEqual(loaded.timeline, stack.timeline)
        self.assertEqual(loaded.spec, stack.spec)
        np.testing.assert_array_equal(loaded.values, stack.values)


class TestSites(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'sites.csv'

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        self.path.write_text(text, encoding='utf-8')
        return self.path

    def test_two_valid_rows(self):
        sites = load_sites(self.write(
            "site_id,lat_deg,lon_deg,start_of_operations,provider\n"
            "A,45.1,10.2,2015-06,acme\n"
            "B,-3.5,120.0,2018-01,\n"))
        self.assertEqual([s.site_id for s in sites], ['A', 'B'])
        self.assertEqual(sites[0].point, GeoPoint(45.1, 10.2))
        self.assertIsNone(sites[1].provider)

    def test_provider_column_optional(self):
        sites = load_sites(self.write("site_id,lat_deg,lon_deg,start_of_operations\nA,1,2,2015-06\n"))
        self.assertEqual(len(sites), 1)

    def test_duplicate_id_listed(self):
        with self.assertRaises(SiteRegistryError) as ctx:
            load_sites(self.write(
                "site_id,lat_deg,lon_deg,start_of_operations\nA,1,2,2015-06\nA,3,4,2016-06\n"))
        self.assertIn('A', ctx.exception.message)
        self.assertEqual(ctx.exception.details['duplicates'], ['A'])

    def test_latitude_out_of_range(self):
        with self.assertRaises(SiteRegistryError) as ctx:
            load_sites(self.write("site_id,lat_deg,lon_deg,start_of_operations\nA,95,2,2015-06\n"))
        self.assertEqual(ctx.exception.field, 'lat_deg')

    def test_unparsable_date(self):
        with self.assertRaises(SiteRegistryError):
            load_sites(self.write("site_id,lat_deg,lon_deg,start_of_operations\nA,5,2,June 2015\n"))

    def test_write_sites_round_trip(self):
        sites = [SiteRecord('X1', GeoPoint(0.123456789012, -45.5), '2019-04', 'p'),
                 SiteRecord('X2', GeoPoint(-1.0 / 3.0, 179.999), '2020-12')]
        write_sites(self.path, sites)
        self.assertEqual(load_sites(self.path), [sites[0], SiteRecord('X2', sites[1].point, '2020-12', None)])


if __name__ == '__main__':
    unittest.main()
