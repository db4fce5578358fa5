"""
Cleaning chain applied before any anomaly math: daily to monthly aggregation,
per-cell climatology, deseasonalization, robust outlier masking, and the site
filters (history/coverage validity, dense-urban exclusion).
"""

import logging
import math
import warnings
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from error_handlers import SpecMismatchError, UsageError, ValidationError
from grid_core import DiskMembership, cell_area_km2, cells_within_radius, locate_cell
from models import (DAILY, MONTHLY, Climatology, GridSpec, RasterStack, SiteRecord, SiteValidity,
                    calendar_month, month_label, month_ordinal)

logger = logging.getLogger(__name__)

MAD_CONSISTENCY = 1.4826
MAD_SCALE_FLOOR = 0.05
OUTLIER_CHUNK_ROWS = 16

KEEP = 'ok'
INSUFFICIENT_HISTORY = 'insufficient-history'
ORIGIN_INVALID = 'origin-invalid'
LOW_COVERAGE = 'low-coverage'
EMPTY_RING = 'empty-ring'
DENSE_URBAN = 'dense-urban'
NO_COVERAGE = 'no-coverage'


def _masked_mean(values: np.ndarray, axis: int, min_count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Mean over valid entries along axis; NaN where fewer than min_count are valid."""
    valid = ~np.isnan(values)
    count = valid.sum(axis=axis)
    total = np.where(valid, values, 0.0).sum(axis=axis)
    with np.errstate(invalid='ignore', divide='ignore'):
        mean = np.where(count >= max(min_count, 1), total / np.maximum(count, 1), np.nan)
    return mean, count


def monthly_from_daily(daily: RasterStack, min_valid_days: int = 8) -> RasterStack:
    """Average daily grids per calendar month; months with too few valid days are NODATA."""
    if daily.cadence != DAILY:
        raise UsageError(f"monthly_from_daily needs a daily stack, got {daily.cadence}", field='cadence')
    ordinals = np.array([month_ordinal(label) for label in daily.timeline])
    first, last = int(ordinals[0]), int(ordinals[-1])
    months = np.full((last - first + 1,) + daily.spec.shape, np.nan)
    for ordinal in range(first, last + 1):
        positions = np.flatnonzero(ordinals == ordinal)
        if len(positions) == 0:
            continue
        months[ordinal - first], _ = _masked_mean(daily.values[positions], axis=0, min_count=min_valid_days)
    timeline = [month_label(ordinal) for ordinal in range(first, last + 1)]
    logger.info(f"Aggregated {len(daily)} daily grids into {len(timeline)} months (min_valid_days={min_valid_days})")
    return daily.with_values(months, timeline=timeline, cadence=MONTHLY)


def default_climatology_window(stack: RasterStack, sites: Sequence[SiteRecord], k: int) -> Tuple[str, str]:
    """The k months before the earliest start of operations, clipped to the timeline."""
    first = month_ordinal(stack.timeline[0])
    last = month_ordinal(stack.timeline[-1])
    if not sites:
        return stack.timeline[0], stack.timeline[-1]
    earliest = min(month_ordinal(site.start_of_operations) for site in sites)
    start, end = max(first, earliest - k), min(last, earliest - 1)
    if end < start:
        logger.warning("No pre-operations months on the timeline; climatology uses the whole stack")
        return stack.timeline[0], stack.timeline[-1]
    return month_label(start), month_label(end)


def climatology(stack: RasterStack, window: Optional[Tuple[str, str]] = None, min_samples: int = 3) -> Climatology:
    """Per-cell mean of each calendar month over the window (inclusive month labels)."""
    stack = stack.densify()
    if stack.cadence != MONTHLY:
        raise UsageError("Climatology needs a monthly stack", field='cadence')
    start, end = window or (stack.timeline[0], stack.timeline[-1])
    lo, hi = stack.index_of(start), stack.index_of(end)
    if lo < 0 or hi >= len(stack):
        raise ValidationError(f"Climatology window {start}..{end} is not inside the timeline "
                              f"{stack.timeline[0]}..{stack.timeline[-1]}", field='climatology_window')
    if hi < lo:
        raise ValidationError(f"Climatology window {start}..{end} is empty", field='climatology_window')

    months = np.array([calendar_month(label) for label in stack.timeline[lo:hi + 1]])
    window_values = stack.values[lo:hi + 1]
    grids = np.full((12,) + stack.spec.shape, np.nan)
    for month in range(12):
        positions = np.flatnonzero(months == month)
        if len(positions):
            grids[month], _ = _masked_mean(window_values[positions], axis=0, min_count=min_samples)
    return Climatology(stack.spec, grids, stack.timeline[lo:hi + 1])


def deseasonalize(stack: RasterStack, clim: Climatology) -> RasterStack:
    """Subtract the calendar-month normal; NODATA on either side stays NODATA."""
    if not stack.spec.same_geometry(clim.spec):
        raise SpecMismatchError("Stack and climatology grids differ", field='spec')
    months = [calendar_month(label) for label in stack.timeline]
    return stack.with_values(stack.values - clim.grids[months])


def _nan_median(values: np.ndarray) -> np.ndarray:
    """Median over the last axis ignoring NaN; NaN where nothing is valid."""
    with warnings.catch_warnings():
        warnings.filterwarnings('ignore', 'All-NaN slice', RuntimeWarning)
        return np.nanmedian(values, axis=-1)


def _outlier_mask(series: np.ndarray, windows: np.ndarray, mad_k: float, s_floor: float) -> np.ndarray:
    """series: (T, ...); windows: (T, ..., w), the values each month is judged against."""
    median = _nan_median(windows)
    mad = _nan_median(np.abs(windows - median[..., None]))
    scale = np.maximum(MAD_CONSISTENCY * mad, s_floor)
    with np.errstate(invalid='ignore'):
        return np.abs(series - median) > mad_k * scale


def mask_outliers(anom: RasterStack, mad_k: float = 3.0, window_months: Optional[int] = None,
                  s_floor: float = MAD_SCALE_FLOOR) -> RasterStack:
    """
    Set values farther than mad_k robust scales from the median to NODATA.

    With window_months None (or 0) median and MAD come from the cell's whole
    valid series. A positive window judges each value against the centered
    window of that many months (rounded up to odd), which leaves a sustained
    level shift unmasked.
    """
    values = anom.values
    masked = np.zeros(values.shape, dtype=bool)
    if window_months and window_months < len(anom):
        width = window_months | 1
        half = width // 2
        padded = np.pad(values, ((half, half), (0, 0), (0, 0)), constant_values=np.nan)
        for row in range(0, anom.spec.nrows, OUTLIER_CHUNK_ROWS):
            block = slice(row, row + OUTLIER_CHUNK_ROWS)
            windows = sliding_window_view(padded[:, block], width, axis=0)
            masked[:, block] = _outlier_mask(values[:, block], windows, mad_k, s_floor)
    else:
        for row in range(0, anom.spec.nrows, OUTLIER_CHUNK_ROWS):
            block = values[:, row:row + OUTLIER_CHUNK_ROWS]
            whole = np.moveaxis(block, 0, -1)[None]
            masked[:, row:row + OUTLIER_CHUNK_ROWS] = _outlier_mask(block, whole, mad_k, s_floor)

    count = int(np.count_nonzero(masked))
    logger.info(f"Masked {count} outliers (mad_k={mad_k}, window={window_months or 'series'})")
    return anom.with_values(np.where(masked, np.nan, values))


def ring_mean_series(values: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Monthly mean over the listed cells (in listed order) and the valid-cell counts."""
    members = values[:, rows, cols]
    return _masked_mean(members, axis=1, min_count=1)


def series_validity(series: np.ndarray, origin: int, k: int, horizon: int,
                    min_valid_fraction: float = 0.5, site_id: str = '') -> SiteValidity:
    """Validity of a monthly series around origin over [origin-k-H, origin+H]."""
    lo, hi = origin - k - horizon, origin + horizon
    overlap = series[max(lo, 0):min(hi, len(series) - 1) + 1]
    span = hi - lo + 1
    fraction = float(np.count_nonzero(~np.isnan(overlap))) / span if span > 0 else 0.0
    if lo < 0 or hi >= len(series):
        return SiteValidity(site_id, False, INSUFFICIENT_HISTORY, fraction)
    if math.isnan(series[origin]):
        return SiteValidity(site_id, False, ORIGIN_INVALID, fraction)
    if fraction < min_valid_fraction:
        return SiteValidity(site_id, False, LOW_COVERAGE, fraction)
    return SiteValidity(site_id, True, KEEP, fraction)


def site_validity(anom: RasterStack, site: SiteRecord, ring0: DiskMembership, k: int, horizon: int,
                  min_valid_fraction: float = 0.5) -> SiteValidity:
    """Keep a site when its ring-0 series covers the required span well enough and i=0 is valid."""
    if len(ring0) == 0:
        return SiteValidity(site.site_id, False, EMPTY_RING, 0.0)
    anom = anom.densify()
    series, _ = ring_mean_series(anom.values, ring0.rows, ring0.cols)
    origin = anom.index_of(site.start_of_operations)
    return series_validity(series, origin, k, horizon, min_valid_fraction, site.site_id)


def mean_density(pop_values: np.ndarray, pop_spec: GridSpec, site: SiteRecord, radius_km: float) -> float:
    """Mean persons/km2 over the population cells within radius_km (NODATA counts as 0)."""
    disk = cells_within_radius(pop_spec, site.point, radius_km)
    if len(disk) == 0:
        return 0.0
    counts = np.nan_to_num(pop_values[disk.rows, disk.cols], nan=0.0)
    areas = np.array([cell_area_km2(pop_spec, int(row)) for row in disk.rows])
    return float(np.mean(counts / areas))


def urban_filter(sites: Sequence[SiteRecord], pop_values: np.ndarray, pop_spec: GridSpec,
                 radius_km: float = 5.0, density_threshold: float = 1500.0
                 ) -> Tuple[List[SiteRecord], List[SiteValidity]]:
    """Exclude sites whose surrounding mean density strictly exceeds the threshold."""
    kept, excluded = [], []
    for site in sites:
        if locate_cell(pop_spec, site.point) is None:
            excluded.append(SiteValidity(site.site_id, False, NO_COVERAGE, float('nan')))
            continue
        density = mean_density(pop_values, pop_spec, site, radius_km)
        if density > density_threshold:
            logger.debug(f"Site {site.site_id} excluded: density {density:.1f}/km2")
            excluded.append(SiteValidity(site.site_id, False, DENSE_URBAN, float('nan')))
        else:
            kept.append(site)
    logger.info(f"Urban filter kept {len(kept)} of {len(sites)} sites "
                f"(radius {radius_km} km, threshold {density_threshold}/km2)")
    return kept, excluded


def write_diagnostics(path, validities: Sequence[SiteValidity]) -> None:
    frame = pd.DataFrame(
        [(v.site_id, v.reason_code, v.valid_fraction) for v in validities if not v.keep],
        columns=['site_id', 'reason_code', 'valid_fraction'])
    frame = frame.sort_values('site_id', kind='stable')
    frame.to_csv(path, index=False, lineterminator='\n', float_format='%.9g')
