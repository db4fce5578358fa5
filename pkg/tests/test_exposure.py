import math
import unittest

import numpy as np

from error_handlers import GridDimensionError, ValidationError
from exposure import coarsen_population, exposure_histogram, exposure_summary, site_delta_at, total_affected
from grid_core import cell_center, haversine_km
from models import ExposureHistogram, GeoPoint, GridSpec, RadialProfile
from tests.helpers import site


def profile_of(means, dr_km=1.0, r_max_km=None):
    means = np.asarray(means, dtype=np.float64)
    radii = (np.arange(len(means)) + 0.5) * dr_km
    r_max_km = r_max_km if r_max_km is not None else len(means) * dr_km
    return RadialProfile(radii, means, means, means, means, means, np.ones(len(means), dtype=np.int64),
                         r_max_km, dr_km, 60)


class TestCoarsenPopulation(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec(100, 100, 10.0, 0.0, 0.001)

    def test_zeros(self):
        coarse, coarse_spec, nodata = coarsen_population(np.zeros(self.spec.shape), self.spec)
        self.assertEqual(coarse.shape, (10, 10))
        self.assertTrue(np.all(coarse == 0.0))
        self.assertEqual(nodata, 0)

    def test_uniform_counts_sum_per_block(self):
        coarse, coarse_spec, _ = coarsen_population(np.ones(self.spec.shape), self.spec)
        self.assertTrue(np.all(coarse == 100.0))
        self.assertEqual((coarse_spec.ncols, coarse_spec.nrows), (10, 10))
        self.assertAlmostEqual(coarse_spec.cellsize_deg, 0.01, places=15)
        self.assertEqual((coarse_spec.xll_deg, coarse_spec.yll_deg), (10.0, 0.0))

    def test_total_is_conserved(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            factor = int(rng.integers(1, 6))
            nrows, ncols = factor * int(rng.integers(1, 8)), factor * int(rng.integers(1, 8))
            spec = GridSpec(ncols, nrows, 0.0, 0.0, 0.001)
            values = rng.poisson(20.0, spec.shape).astype(np.float64)
            values[rng.random(spec.shape) < 0.05] = np.nan
            coarse, _, nodata = coarsen_population(values, spec, factor)
            self.assertEqual(float(coarse.sum()), float(np.nansum(values)))
            self.assertEqual(nodata, int(np.count_nonzero(np.isnan(values))))

    def test_non_divisible_grid(self):
        spec = GridSpec(105, 100, 10.0, 0.0, 0.001)
        with self.assertRaises(GridDimensionError) as ctx:
            coarsen_population(np.zeros(spec.shape), spec)
        self.assertIn('pad', ctx.exception.message)


class TestSiteDeltaAt(unittest.TestCase):
    def setUp(self):
        self.profile = profile_of([3.0, 2.0, 1.0])

    def test_at_midpoint(self):
        self.assertEqual(site_delta_at(self.profile, 1.5), 2.0)

    def test_between_midpoints(self):
        self.assertAlmostEqual(site_delta_at(self.profile, 1.0), 2.5, places=12)

    def test_flat_at_the_ends(self):
        self.assertEqual(site_delta_at(self.profile, 0.0), 3.0)
        self.assertEqual(site_delta_at(self.profile, 2.9), 1.0)
        self.assertEqual(site_delta_at(self.profile, 3.0), 1.0)

    def test_zero_beyond_radius(self):
        self.assertEqual(site_delta_at(self.profile, 3.01), 0.0)

    def test_undefined_rings_skipped(self):
        profile = profile_of([3.0, np.nan, 1.0])
        self.assertAlmostEqual(site_delta_at(profile, 1.5), 2.0, places=12)

    def test_invalid_arguments(self):
        with self.assertRaises(ValidationError):
            site_delta_at(self.profile, -1.0)
        with self.assertRaises(ValidationError):
            site_delta_at(profile_of([np.nan, np.nan]), 0.5)


class TestExposureHistogram(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec(60, 60, 10.0, 0.0, 0.002)
        self.sites = [site('A', GeoPoint(0.06, 10.05), '2015-01'), site('B', GeoPoint(0.063, 10.075), '2015-01')]
        self.population = np.random.default_rng(2).poisson(5.0, self.spec.shape).astype(np.float64)

    def brute_force(self, profiles, r_max_km, bin_width, dedup):
        pairs = []
        for row in range(self.spec.nrows):
            for col in range(self.spec.ncols):
                center = cell_center(self.spec, row, col)
                deltas = [site_delta_at(profiles[s.site_id], haversine_km(s.point, center))
                          for s in self.sites if haversine_km(s.point, center) <= r_max_km]
                if not deltas:
                    continue
                chosen = [max(deltas)] if dedup == 'max' else deltas
                pairs.extend((delta, self.population[row, col]) for delta in chosen)
        nbins = int(math.floor(max(d for d, _ in pairs) / bin_width)) + 1
        counts = np.zeros(nbins)
        for delta, people in pairs:
            counts[min(int(math.floor(delta / bin_width)), nbins - 1)] += people
        return counts

    def test_no_population(self):
        profiles = {'A': profile_of([2.0] * 5)}
        hist = exposure_histogram(self.sites, profiles, np.zeros(self.spec.shape), self.spec, 5.0)
        self.assertEqual(hist.total, 0.0)

    def test_flat_profile_single_bin(self):
        profiles = {'A': profile_of([2.0] * 5)}
        hist = exposure_histogram(self.sites[:1], profiles, np.ones(self.spec.shape), self.spec, 5.0, 0.5)
        self.assertEqual(hist.edges.tolist(), [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
        self.assertEqual(hist.counts[:4].tolist(), [0.0] * 4)
        self.assertGreater(hist.counts[4], 0.0)

    def test_overlap_counted_once_at_max(self):
        profiles = {'A': profile_of([2.3, 1.7, 1.1, 0.6, 0.2]), 'B': profile_of([1.9, 1.5, 1.2, 0.8, 0.3])}
        hist = exposure_histogram(self.sites, profiles, self.population, self.spec, 5.0, 0.5, 'max')
        np.testing.assert_allclose(hist.counts, self.brute_force(profiles, 5.0, 0.5, 'max'))

    def test_per_site_counts_each_site(self):
        profiles = {'A': profile_of([2.3, 1.7, 1.1, 0.6, 0.2]), 'B': profile_of([1.9, 1.5, 1.2, 0.8, 0.3])}
        hist = exposure_histogram(self.sites, profiles, self.population, self.spec, 5.0, 0.5, 'per-site')
        np.testing.assert_allclose(hist.counts, self.brute_force(profiles, 5.0, 0.5, 'per-site'))
        deduped = exposure_histogram(self.sites, profiles, self.population, self.spec, 5.0, 0.5, 'max')
        self.assertGreater(hist.total, deduped.total)

    def test_worker_pool_matches_serial(self):
        profiles = {'A': profile_of([2.3, 1.7, 1.1, 0.6, 0.2]), 'B': profile_of([1.9, 1.5, 1.2, 0.8, 0.3])}
        serial = exposure_histogram(self.sites, profiles, self.population, self.spec, 5.0, 0.5)
        pooled = exposure_histogram(self.sites, profiles, self.population, self.spec, 5.0, 0.5, workers=4)
        np.testing.assert_array_equal(serial.counts, pooled.counts)

    def test_nodata_population_counts_as_zero(self):
        population = self.population.copy()
        population[30, 25] = np.nan
        profiles = {'A': profile_of([2.0] * 5)}
        hist = exposure_histogram(self.sites[:1], profiles, population, self.spec, 5.0)
        self.assertEqual(hist.nodata_cells, 1)

    def test_negative_increase_dropped(self):
        profiles = {'A': profile_of([-0.5] * 5)}
        hist = exposure_histogram(self.sites[:1], profiles, np.ones(self.spec.shape), self.spec, 5.0)
        self.assertEqual(hist.total, 0.0)
        self.assertGreater(hist.dropped_negative, 0.0)

    def test_site_without_profile_is_skipped(self):
        profiles = {'A': profile_of([2.0] * 5)}
        both = exposure_histogram(self.sites, profiles, self.population, self.spec, 5.0)
        alone = exposure_histogram(self.sites[:1], profiles, self.population, self.spec, 5.0)
        np.testing.assert_array_equal(both.counts, alone.counts)

    def test_mismatched_radius(self):
        with self.assertRaises(ValidationError):
            exposure_histogram(self.sites, {'A': profile_of([2.0] * 5)}, self.population, self.spec, 10.0)

    def test_unknown_dedup(self):
        with self.assertRaises(ValidationError):
            exposure_histogram(self.sites, {}, self.population, self.spec, 5.0, dedup='sum')


class TestTotalAffected(unittest.TestCase):
    def setUp(self):
        self.hist = ExposureHistogram(np.array([0.0, 0.5, 1.0, 1.5]), np.array([10.0, 20.0, 30.0]),
                                      'max', 10.0, 0.5)

    def test_everyone(self):
        self.assertEqual(total_affected(self.hist), 60.0)

    def test_above_largest_bin(self):
        self.assertEqual(total_affected(self.hist, 2.0), 0.0)

    def test_interior_edge(self):
        self.assertEqual(total_affected(self.hist, 1.0), 30.0)
        self.assertEqual(total_affected(self.hist, 0.5), 50.0)

    def test_summary(self):
        summary = exposure_summary(self.hist)
        self.assertEqual(summary['total_affected'], 60.0)
        self.assertEqual(summary['affected_at_least_1_degC'], 30.0)
        self.assertEqual(summary['affected_at_least_2_degC'], 0.0)
        self.assertEqual(summary['dedup'], 'max')


if __name__ == '__main__':
    unittest.main()
