"""
Population exposure: coarsen population counts, map each site's radial
profile onto population cells and histogram people by the increase they
experience.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Sequence, Tuple

import numpy as np

from error_handlers import GridDimensionError, ValidationError
from grid_core import cells_within_radius
from models import ExposureHistogram, GridSpec, RadialProfile, SiteRecord

logger = logging.getLogger(__name__)

DEDUP_MAX = 'max'
DEDUP_PER_SITE = 'per-site'
DEDUP_POLICIES = (DEDUP_MAX, DEDUP_PER_SITE)
SUMMARY_THRESHOLDS_DEGC = (0.0, 1.0, 2.0)


def coarsen_population(values: np.ndarray, spec: GridSpec, factor: int = 10) -> Tuple[np.ndarray, GridSpec, int]:
    """
    Sum factor x factor blocks of a population count grid.

    Returns the coarse counts, their spec and the number of NODATA fine
    cells (counted as 0).
    """
    if factor < 1:
        raise ValidationError(f"Coarsening factor must be positive: {factor}", field='population_factor')
    nrows, ncols = spec.shape
    if nrows % factor or ncols % factor:
        pad_rows, pad_cols = -nrows % factor, -ncols % factor
        raise GridDimensionError(
            f"Population grid {nrows}x{ncols} is not divisible by {factor}; pad with {pad_rows} rows and "
            f"{pad_cols} columns of NODATA or crop to {nrows - nrows % factor}x{ncols - ncols % factor}",
            field='population_grid')
    values = np.asarray(values, dtype=np.float64)
    nodata = np.isnan(values)
    nodata_cells = int(np.count_nonzero(nodata))
    if nodata_cells:
        logger.warning(f"{nodata_cells} population cells are NODATA and count as 0")
    counts = np.where(nodata, 0.0, values)
    coarse = counts.reshape(nrows // factor, factor, ncols // factor, factor).sum(axis=(1, 3))
    coarse_spec = GridSpec(ncols // factor, nrows // factor, spec.xll_deg, spec.yll_deg,
                           spec.cellsize_deg * factor, spec.nodata)
    return coarse, coarse_spec, nodata_cells


def _profile_at(profile: RadialProfile, distances: np.ndarray) -> np.ndarray:
    defined = ~np.isnan(profile.mean)
    if not np.any(defined):
        raise ValidationError("Profile has no defined ring", field='profile')
    distances = np.asarray(distances, dtype=np.float64)
    if np.any(distances < 0):
        raise ValidationError("Distance must be non-negative", field='d_km')
    deltas = np.interp(distances, profile.r_mid_km[defined], profile.mean[defined])
    return np.where(distances > profile.r_max_km, 0.0, deltas)


def site_delta_at(profile: RadialProfile, d_km: float) -> float:
    """Mean-profile increase at a distance: linear between midpoints, flat inside the first, 0 beyond r_max."""
    return float(_profile_at(profile, np.array([d_km]))[0])


def exposure_histogram(sites: Sequence[SiteRecord], profiles: Dict[str, RadialProfile], pop_values: np.ndarray,
                       pop_spec: GridSpec, r_max_km: float = 10.0, bin_width: float = 0.5,
                       dedup: str = DEDUP_MAX, workers: int = 1) -> ExposureHistogram:
    """
    Population per bin of experienced increase.

    With dedup 'max' every covered cell is counted once at the largest
    increase over the sites whose disk covers it; 'per-site' counts a cell
    once per covering site.
    """
    if dedup not in DEDUP_POLICIES:
        raise ValidationError(f"Unknown dedup policy {dedup!r}", field='dedup')
    if not bin_width > 0:
        raise ValidationError(f"Bin width must be positive: {bin_width}", field='bin_width')
    for site_id, profile in profiles.items():
        if not math.isclose(profile.r_max_km, r_max_km):
            raise ValidationError(f"Profile of {site_id} has r_max {profile.r_max_km} km, expected {r_max_km} km",
                                  field='r_max_km')

    covered_sites = [site for site in sorted(sites, key=lambda s: s.site_id) if site.site_id in profiles]
    skipped = len(sites) - len(covered_sites)
    if skipped:
        logger.info(f"{skipped} sites have no radial profile and are left out of the exposure count")

    def scan(site):
        disk = cells_within_radius(pop_spec, site.point, r_max_km)
        disk = disk.subset(disk.distances <= r_max_km)
        return disk.rows, disk.cols, _profile_at(profiles[site.site_id], disk.distances)

    if workers > 1 and len(covered_sites) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scans = list(pool.map(scan, covered_sites))
    else:
        scans = [scan(site) for site in covered_sites]

    pop_values = np.asarray(pop_values, dtype=np.float64)
    if scans:
        rows = np.concatenate([s[0] for s in scans])
        cols = np.concatenate([s[1] for s in scans])
        deltas = np.concatenate([s[2] for s in scans])
    else:
        rows = cols = np.array([], dtype=np.int64)
        deltas = np.array([])

    if dedup == DEDUP_MAX and len(rows):
        best = np.full(pop_spec.shape, -np.inf)
        np.maximum.at(best, (rows, cols), deltas)
        rows, cols = np.nonzero(np.isfinite(best))
        deltas = best[rows, cols]

    population = pop_values[rows, cols] if len(rows) else np.array([])
    nodata_cells = int(np.count_nonzero(np.isnan(population)))
    if nodata_cells:
        logger.info(f"{nodata_cells} covered population cells are NODATA and count as 0")
    population = np.nan_to_num(population, nan=0.0)

    negative = deltas < 0
    dropped = float(np.sum(population[negative]))
    if np.any(negative):
        logger.warning(f"{int(np.count_nonzero(negative))} covered cells have a negative increase; "
                       f"{dropped:g} people left out of the histogram")
    deltas, population = deltas[~negative], population[~negative]

    nbins = int(math.floor(float(np.max(deltas)) / bin_width)) + 1 if len(deltas) else 1
    edges = np.arange(nbins + 1, dtype=np.float64) * bin_width
    index = np.minimum(np.floor(deltas / bin_width).astype(np.int64), nbins - 1)
    counts = np.bincount(index, weights=population, minlength=nbins).astype(np.float64)
    hist = ExposureHistogram(edges, counts, dedup, r_max_km, bin_width, nodata_cells, dropped)
    logger.info(f"Exposure histogram: {hist.total:g} people in {nbins} bins (dedup={dedup})")
    return hist


def total_affected(hist: ExposureHistogram, min_delta: float = 0.0) -> float:
    """Population in bins whose lower edge is at least min_delta."""
    return float(np.sum(hist.counts[hist.edges[:-1] >= min_delta]))


def exposure_summary(hist: ExposureHistogram) -> Dict[str, object]:
    summary = {
        'total_affected': total_affected(hist),
        'dedup': hist.dedup,
        'r_max_km': hist.r_max_km,
        'bin_width_degC': hist.bin_width,
        'nodata_population_cells': hist.nodata_cells,
        'dropped_negative_population': hist.dropped_negative,
    }
    for threshold in SUMMARY_THRESHOLDS_DEGC:
        summary[f"affected_at_least_{threshold:g}_degC"] = total_affected(hist, threshold)
    return summary
