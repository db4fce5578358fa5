"""
Temporal and spatial temperature deltas around facilities.

temporal_delta is the normalised increase of month i over the mean of the k
months before it; spatial_delta applies the same rule to the ring-mean series
of one distance ring at the start-of-operations month. Per-site results are
aggregated across sites into bands (mean, min, max, quantile bounds).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from error_handlers import EmptyRingError, InsufficientHistoryError, UndefinedMetricsError, ValidationError
from grid_core import DiskMembership, cells_within_radius, locate_cell, ring_partition
from models import (AggregateBand, DecayMetrics, EpochDeltaSeries, GeoPoint, RadialProfile, RasterStack,
                    RingSeries, RingSpec, SiteRecord, SiteValidity)
from preprocess import EMPTY_RING, ring_mean_series, series_validity

logger = logging.getLogger(__name__)

CENTRAL_95 = (0.025, 0.975)
UPPER_95 = (0.0, 0.95)
BANDS = {'central95': CENTRAL_95, 'upper95': UPPER_95}

BEYOND_RANGE = 'beyond-range'


def quantile_label(q: float) -> str:
    return f"p{q * 100:g}"


def ring_series(anom: RasterStack, site: SiteRecord, ring: DiskMembership, r_mid_km: float) -> RingSeries:
    """Monthly mean over the valid cells of one ring; NODATA when no member is valid."""
    if len(ring) == 0:
        raise EmptyRingError(f"Ring at {r_mid_km} km around {site.site_id} has no cells", field='ring')
    values, counts = ring_mean_series(anom.values, ring.rows, ring.cols)
    return RingSeries(site.site_id, r_mid_km, values, counts, ring.cells)


def temporal_delta(series: np.ndarray, i: int, k: int, min_valid_fraction: float = 0.5) -> float:
    """
    T[i] minus the mean of the valid months among T[i-k..i-1].

    NaN when month i is NODATA or fewer than min_valid_fraction of the k
    baseline months are valid.
    """
    if k < 1:
        raise ValidationError(f"Baseline window must be at least one month: {k}", field='k')
    if i - k < 0 or i >= len(series):
        raise InsufficientHistoryError(
            f"Month {i} with k={k} needs months {i - k}..{i} but the series has 0..{len(series) - 1}")
    current = series[i]
    if math.isnan(current):
        return float('nan')
    baseline = series[i - k:i]
    valid = baseline[~np.isnan(baseline)]
    if len(valid) == 0 or len(valid) / k < min_valid_fraction:
        return float('nan')
    return float(current - np.mean(valid))


def epoch_delta_series(series: np.ndarray, start: int, k: int, horizon: int = 10,
                       min_valid_fraction: float = 0.5, site_id: str = '') -> EpochDeltaSeries:
    """Deltas for i in [-H, H] with i = 0 at the start-of-operations index."""
    values = np.full(2 * horizon + 1, np.nan)
    insufficient = False
    for offset in range(-horizon, horizon + 1):
        try:
            values[offset + horizon] = temporal_delta(series, start + offset, k, min_valid_fraction)
        except InsufficientHistoryError:
            insufficient = True
    if insufficient:
        logger.debug(f"Site {site_id}: part of the epoch axis lacks history (k={k}, H={horizon})")
    return EpochDeltaSeries(site_id, k, horizon, values, insufficient)


def spatial_delta(anom: RasterStack, site: SiteRecord, ring: DiskMembership, k: int,
                  min_valid_fraction: float = 0.5, r_mid_km: float = 0.0) -> float:
    anom = anom.densify()
    series = ring_series(anom, site, ring, r_mid_km)
    return temporal_delta(series.values, anom.index_of(site.start_of_operations), k, min_valid_fraction)


def _band(matrix: np.ndarray, quantiles: Tuple[float, float]) -> Dict[str, np.ndarray]:
    """Column statistics over the valid (non-NaN) rows of a sites x columns matrix."""
    columns = matrix.shape[1]
    stats = {name: np.full(columns, np.nan) for name in ('mean', 'minimum', 'maximum', 'p_lo', 'p_hi')}
    stats['n_sites'] = np.zeros(columns, dtype=np.int64)
    for column in range(columns):
        values = matrix[:, column]
        values = values[~np.isnan(values)]
        if len(values) == 0:
            continue
        lo, hi = float(np.min(values)), float(np.max(values))
        stats['minimum'][column] = lo
        stats['maximum'][column] = hi
        # rounding in the sum can push the mean of equal values one ulp outside [min, max]
        stats['mean'][column] = min(max(float(np.mean(values)), lo), hi)
        p_lo, p_hi = np.quantile(values, quantiles, method='linear')
        stats['p_lo'][column] = min(max(float(p_lo), lo), hi)
        stats['p_hi'][column] = min(max(float(p_hi), lo), hi)
        stats['n_sites'][column] = len(values)
    return stats


def aggregate_sites(series_list: Sequence[EpochDeltaSeries],
                    quantiles: Tuple[float, float] = CENTRAL_95) -> AggregateBand:
    """Per-offset statistics across sites, reduced in site_id order."""
    if not series_list:
        raise ValidationError("Cannot aggregate an empty list of sites", field='sites')
    horizons = {series.horizon for series in series_list}
    if len(horizons) != 1:
        raise ValidationError(f"Series have different horizons: {sorted(horizons)}", field='horizon')
    ordered = sorted(series_list, key=lambda series: series.site_id)
    matrix = np.vstack([series.values for series in ordered])
    stats = _band(matrix, quantiles)
    return AggregateBand(ordered[0].offsets, stats['mean'], stats['minimum'], stats['maximum'],
                         stats['p_lo'], stats['p_hi'], stats['n_sites'], tuple(quantiles))


@dataclass
class SweepRow:
    k: int
    average: float
    minimum: float
    maximum: float
    n_sites: int


def table_sweep(site_series: Sequence[Tuple[str, np.ndarray, int]], k_list: Sequence[int] = (12, 24, 36, 120),
                min_valid_fraction: float = 0.5) -> Tuple[List[SweepRow], List[Tuple[str, int, str]]]:
    """
    Average, minimum and maximum of the start-of-operations delta for each k.

    site_series holds (site_id, monthly series, start index). Sites without
    enough history (or with an undefined delta) for a k are left out of that
    k and reported in the diagnostics as (site_id, k, reason).
    """
    rows, diagnostics = [], []
    ordered = sorted(site_series, key=lambda item: item[0])
    for k in k_list:
        deltas = []
        for site_id, series, start in ordered:
            try:
                delta = temporal_delta(series, start, k, min_valid_fraction)
            except InsufficientHistoryError:
                diagnostics.append((site_id, k, 'insufficient-history'))
                continue
            if math.isnan(delta):
                diagnostics.append((site_id, k, 'undefined'))
                continue
            deltas.append(delta)
        if deltas:
            values = np.array(deltas)
            rows.append(SweepRow(k, float(np.mean(values)), float(np.min(values)), float(np.max(values)), len(deltas)))
        else:
            rows.append(SweepRow(k, float('nan'), float('nan'), float('nan'), 0))
    return rows, diagnostics


def site_ring_deltas(anom: RasterStack, site: SiteRecord, ring_spec: RingSpec, k: int,
                     min_valid_fraction: float = 0.5) -> np.ndarray:
    """Spatial delta per ring for one site; NaN where the ring is empty or fails validity."""
    anom = anom.densify()
    rings, coverage = ring_partition(anom.spec, ring_spec)
    if coverage < 1.0:
        logger.debug(f"Site {site.site_id}: {coverage:.1%} of the {ring_spec.r_max_km} km disk is on the grid")
    origin = anom.index_of(site.start_of_operations)
    deltas = np.full(ring_spec.n_rings, np.nan)
    for n, ring in enumerate(rings):
        if len(ring) == 0:
            continue
        series, _ = ring_mean_series(anom.values, ring.rows, ring.cols)
        if not series_validity(series, origin, k, 0, min_valid_fraction, site.site_id).keep:
            continue
        deltas[n] = temporal_delta(series, origin, k, min_valid_fraction)
    return deltas


def profile_from_deltas(deltas: Dict[str, np.ndarray], midpoints: Sequence[float], r_max_km: float,
                        dr_km: float, k: int, quantiles: Tuple[float, float] = CENTRAL_95) -> RadialProfile:
    if not deltas:
        raise ValidationError("No site deltas to build a radial profile from", field='sites')
    matrix = np.vstack([deltas[site_id] for site_id in sorted(deltas)])
    stats = _band(matrix, quantiles)
    return RadialProfile(np.asarray(midpoints, dtype=np.float64), stats['mean'], stats['minimum'], stats['maximum'],
                         stats['p_lo'], stats['p_hi'], stats['n_sites'], r_max_km, dr_km, k, tuple(quantiles))


def radial_profile(anom: RasterStack, sites: Sequence[SiteRecord], r_max_km: float = 10.0, dr_km: float = 1.0,
                   k: int = 60, min_valid_fraction: float = 0.5,
                   quantiles: Tuple[float, float] = CENTRAL_95) -> RadialProfile:
    """Cross-site aggregate of per-ring spatial deltas."""
    anom = anom.densify()
    deltas = {site.site_id: site_ring_deltas(anom, site, RingSpec(site.point, r_max_km, dr_km), k, min_valid_fraction)
              for site in sites}
    midpoints = RingSpec(sites[0].point, r_max_km, dr_km).midpoints if sites else []
    return profile_from_deltas(deltas, midpoints, r_max_km, dr_km, k, quantiles)


def _crossing(radii: np.ndarray, means: np.ndarray, target: float) -> Optional[float]:
    if len(means) and means[0] == target:
        return float(radii[0])
    for n in range(1, len(means)):
        if means[n - 1] > target >= means[n]:
            r0, r1, m0, m1 = radii[n - 1], radii[n], means[n - 1], means[n]
            return float(r0 + (m0 - target) / (m0 - m1) * (r1 - r0))
    return None


def decay_metrics(profile: RadialProfile, fraction: float = 0.3, abs_level_degC: float = 1.0) -> DecayMetrics:
    """
    Distances where the mean profile first falls to fraction x peak and to an
    absolute level, by linear interpolation between ring midpoints.
    """
    if len(profile.mean) == 0 or math.isnan(profile.mean[0]):
        raise UndefinedMetricsError("Profile has no value at the innermost ring", field='profile')
    peak = float(profile.mean[0])
    if peak <= 0:
        raise UndefinedMetricsError(f"Peak increase {peak:.3f} is not positive", field='profile')
    defined = ~np.isnan(profile.mean)
    radii, means = profile.r_mid_km[defined], profile.mean[defined]

    d_fraction = _crossing(radii, means, fraction * peak)
    d_abs = _crossing(radii, means, abs_level_degC)
    fraction_status = 'ok' if d_fraction is not None else BEYOND_RANGE
    abs_status = 'ok' if d_abs is not None else BEYOND_RANGE
    return DecayMetrics(d_fraction, d_abs, fraction, abs_level_degC, peak, fraction_status, abs_status)


class AnomalyEngine:
    """Runs the per-site analyses on a worker pool and reduces them in site_id order"""

    def __init__(self, anom: RasterStack, sites: Sequence[SiteRecord], k: int = 60, horizon: int = 10,
                 dr_km: float = 1.0, r_max_km: float = 10.0, min_valid_fraction: float = 0.5,
                 center_cell_only: bool = False, band: str = 'central95', workers: int = 1):
        if band not in BANDS:
            raise ValidationError(f"Unknown band {band!r}", field='band')
        self.anom = anom.densify()
        self.sites = sorted(sites, key=lambda site: site.site_id)
        self.k = k
        self.horizon = horizon
        self.dr_km = dr_km
        self.r_max_km = r_max_km
        self.min_valid_fraction = min_valid_fraction
        self.center_cell_only = center_cell_only
        self.quantiles = BANDS[band]
        self.workers = workers
        logger.info(f"Anomaly engine: {len(self.sites)} sites, k={k}, H={horizon}, dr={dr_km} km, "
                    f"r_max={r_max_km} km, workers={workers}")

    def _map(self, task: Callable[[SiteRecord], object], sites: Optional[Sequence[SiteRecord]] = None) -> Dict[str, object]:
        sites = self.sites if sites is None else sites
        if self.workers > 1 and len(sites) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(task, sites))
        else:
            results = [task(site) for site in sites]
        return {site.site_id: result for site, result in zip(sites, results)}

    def ring_spec(self, site: SiteRecord) -> RingSpec:
        return RingSpec(site.point, self.r_max_km, self.dr_km)

    def origin(self, site: SiteRecord) -> int:
        return self.anom.index_of(site.start_of_operations)

    def center_cells(self, site: SiteRecord) -> DiskMembership:
        """Cells standing for r = 0: ring 0, or only the containing cell."""
        if self.center_cell_only:
            disk = cells_within_radius(self.anom.spec, site.point, 0.0)
            cell = locate_cell(self.anom.spec, site.point)
            if cell is None:
                return disk
            return disk.subset((disk.rows == cell[0]) & (disk.cols == cell[1]))
        rings, _ = ring_partition(self.anom.spec, self.ring_spec(site))
        return rings[0]

    def center_series(self, site: SiteRecord) -> RingSeries:
        ring = self.center_cells(site)
        r_mid = 0.0 if self.center_cell_only else self.ring_spec(site).midpoints[0]
        return ring_series(self.anom, site, ring, r_mid)

    def validity(self, sites: Optional[Sequence[SiteRecord]] = None) -> List[SiteValidity]:
        def check(site):
            ring = self.center_cells(site)
            if len(ring) == 0:
                return SiteValidity(site.site_id, False, EMPTY_RING, 0.0)
            series, _ = ring_mean_series(self.anom.values, ring.rows, ring.cols)
            return series_validity(series, self.origin(site), self.k, self.horizon,
                                   self.min_valid_fraction, site.site_id)
        results = self._map(check, sites)
        return [results[site_id] for site_id in sorted(results)]

    def _center_values(self) -> Dict[str, Optional[np.ndarray]]:
        def values(site):
            try:
                return self.center_series(site).values
            except EmptyRingError:
                logger.warning(f"Site {site.site_id} has no cells at its center; skipped")
                return None
        return self._map(values)

    def epoch_series(self) -> List[EpochDeltaSeries]:
        series = self._center_values()
        results = []
        for site in self.sites:
            if series[site.site_id] is None:
                continue
            results.append(epoch_delta_series(series[site.site_id], self.origin(site), self.k, self.horizon,
                                              self.min_valid_fraction, site.site_id))
        return results

    def epoch_band(self, series_list: Optional[List[EpochDeltaSeries]] = None) -> AggregateBand:
        return aggregate_sites(series_list if series_list is not None else self.epoch_series(), self.quantiles)

    def sweep(self, k_list: Sequence[int]) -> Tuple[List[SweepRow], List[Tuple[str, int, str]]]:
        series = self._center_values()
        inputs = [(site.site_id, series[site.site_id], self.origin(site))
                  for site in self.sites if series[site.site_id] is not None]
        return table_sweep(inputs, k_list, self.min_valid_fraction)

    def ring_deltas(self) -> Dict[str, np.ndarray]:
        return self._map(lambda site: site_ring_deltas(self.anom, site, self.ring_spec(site), self.k,
                                                       self.min_valid_fraction))

    def midpoints(self) -> List[float]:
        return RingSpec(self.sites[0].point if self.sites else GeoPoint(0.0, 0.0), self.r_max_km, self.dr_km).midpoints

    def radial(self, deltas: Optional[Dict[str, np.ndarray]] = None) -> RadialProfile:
        deltas = deltas if deltas is not None else self.ring_deltas()
        return profile_from_deltas(deltas, self.midpoints(), self.r_max_km, self.dr_km, self.k, self.quantiles)

    def site_profiles(self, deltas: Dict[str, np.ndarray]) -> Dict[str, RadialProfile]:
        """One single-site profile per site that has at least one defined ring."""
        profiles = {}
        for site_id in sorted(deltas):
            if np.all(np.isnan(deltas[site_id])):
                continue
            profiles[site_id] = profile_from_deltas({site_id: deltas[site_id]}, self.midpoints(),
                                                    self.r_max_km, self.dr_km, self.k, self.quantiles)
        return profiles


def headline(band: AggregateBand) -> Dict[str, float]:
    """Start-of-operations summary: average, extremes and band bounds at i = 0."""
    row = band.row(0)
    return {
        'average_degC': row['mean'],
        'minimum_degC': row['min'],
        'maximum_degC': row['max'],
        quantile_label(band.quantiles[0]) + '_degC': row['p_lo'],
        quantile_label(band.quantiles[1]) + '_degC': row['p_hi'],
        'n_sites': row['n_sites'],
    }
