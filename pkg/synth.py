"""
Synthetic scenarios with known heat islands.

Every period is built from a seasonal cycle, a linear trend, the Gaussian
step footprints of the sites and seeded noise:

    T(cell, t) = base + amp * cos(2*pi*(month(t) - phase) / 12) + trend * t
                 + sum_sites A * 1[t >= onset] * exp(-d^2 / (2 * sigma^2)) + noise

month(t) is the calendar month 1..12 and t the month index from the start of
the timeline. Noise for period p is drawn from numpy's PCG64 generator
seeded with the sequence [seed, p], and the NODATA drop mask from
[seed, p, 1], so the output is the same whatever order the periods are built
in.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from error_handlers import ValidationError
from grid_core import center_coordinates, haversine_km_array, locate_cell, ring_partition
from models import (DAILY, EARTH_RADIUS_KM, GeoPoint, GridSpec, PopulationParams, RasterStack,
                    RingSpec, ScenarioParams, ScenarioSite, SiteRecord, calendar_month, days_of_month,
                    month_ordinal, month_range)
from raster_io import write_grid, write_sites, write_stack

logger = logging.getLogger(__name__)

NODATA_STREAM = 1
POPULATION_STREAM = 7303


@dataclass
class Scenario:
    stack: RasterStack
    sites: List[SiteRecord]
    population: Optional[np.ndarray] = None
    population_spec: Optional[GridSpec] = None


def lattice_sites(spec: GridSpec, n: int, onset: str, amplitude_degC: float = 2.0,
                  sigma_km: float = 4.51, prefix: str = 'DC') -> List[ScenarioSite]:
    """n sites at the centers of a near-square (in km) lattice of slots over the grid."""
    if n < 1:
        raise ValidationError(f"Need at least one site: {n}", field='n_sites')
    mid_lat = math.radians(spec.yll_deg + spec.nrows * spec.cellsize_deg / 2.0)
    width_km = spec.ncols * math.radians(spec.cellsize_deg) * EARTH_RADIUS_KM * math.cos(mid_lat)
    height_km = spec.nrows * math.radians(spec.cellsize_deg) * EARTH_RADIUS_KM
    ncols = max(1, int(round(math.sqrt(n * width_km / height_km))))
    nrows = int(math.ceil(n / ncols))

    sites = []
    for position in range(n):
        row, col = divmod(position, ncols)
        lat = spec.top_deg - (row + 0.5) / nrows * spec.nrows * spec.cellsize_deg
        lon = spec.xll_deg + (col + 0.5) / ncols * spec.ncols * spec.cellsize_deg
        sites.append(ScenarioSite(f"{prefix}{position + 1:03d}", GeoPoint(lat, lon), onset, amplitude_degC, sigma_km))
    return sites


def params_from_config(config: Dict, seed: int = 42) -> ScenarioParams:
    """Build ScenarioParams from a loaded ScenarioSchema document."""
    spec = GridSpec(config['ncols'], config['nrows'], config['xll_deg'], config['yll_deg'], config['cellsize_deg'])
    timeline = month_range(config['start'], config['months'])
    sites = lattice_sites(spec, config['n_sites'], config['onset'], config['amplitude_degC'], config['sigma_km'])
    population = None
    if config.get('with_population', True):
        population = PopulationParams(**config['population']) if config.get('population') else PopulationParams()
    return ScenarioParams(
        spec=spec, timeline=timeline, sites=sites,
        base_degC=config['base_degC'], seasonal_amp_degC=config['seasonal_amp_degC'],
        seasonal_phase_month=config['seasonal_phase_month'],
        trend_degC_per_month=config['trend_degC_per_month'], noise_sd_degC=config['noise_sd_degC'],
        seed=seed, cadence=config['cadence'], nodata_rate=config['nodata_rate'], population=population)


def _check_params(params: ScenarioParams) -> None:
    first, last = month_ordinal(params.timeline[0]), month_ordinal(params.timeline[-1])
    for site in params.sites:
        if locate_cell(params.spec, site.point) is None:
            raise ValidationError(f"Site {site.site_id} at {site.point.to_dict()} is outside the grid", field='sites')
        if not first <= month_ordinal(site.onset) <= last:
            raise ValidationError(f"Onset {site.onset} of {site.site_id} is outside the timeline", field='onset')
    if not 0.0 <= params.nodata_rate < 1.0:
        raise ValidationError(f"NODATA rate must be in [0, 1): {params.nodata_rate}", field='nodata_rate')


def _footprints(spec: GridSpec, sites: List[ScenarioSite]) -> np.ndarray:
    """A * exp(-d^2 / 2 sigma^2) of every site over the grid, shape (sites, nrows, ncols)."""
    rows, cols = np.meshgrid(np.arange(spec.nrows), np.arange(spec.ncols), indexing='ij')
    lat, lon = center_coordinates(spec, rows, cols)
    footprints = np.empty((len(sites),) + spec.shape)
    for position, site in enumerate(sites):
        distances = haversine_km_array(lat, lon, site.point)
        footprints[position] = site.amplitude_degC * np.exp(-distances ** 2 / (2.0 * site.sigma_km ** 2))
    return footprints


def generate(params: ScenarioParams, workers: int = 1) -> Scenario:
    """Build the scenario stack, its site registry and (optionally) a fine population grid."""
    _check_params(params)
    first = month_ordinal(params.timeline[0])
    months = [month_ordinal(label) for label in params.timeline]
    if params.cadence == DAILY:
        periods = [day for label in params.timeline for day in days_of_month(label)]
    else:
        periods = list(params.timeline)

    footprints = _footprints(params.spec, params.sites)
    onsets = np.array([month_ordinal(site.onset) for site in params.sites])
    values = np.empty((len(periods),) + params.spec.shape)

    def build(position):
        label = periods[position]
        month = month_ordinal(label)
        t = month - first
        seasonal = params.seasonal_amp_degC * math.cos(
            2.0 * math.pi * (calendar_month(label) + 1 - params.seasonal_phase_month) / 12.0)
        field = np.full(params.spec.shape, params.base_degC + seasonal + params.trend_degC_per_month * t)
        active = np.flatnonzero(onsets <= month)
        if len(active):
            field += footprints[active].sum(axis=0)
        if params.noise_sd_degC > 0:
            field += np.random.default_rng([params.seed, position]).normal(0.0, params.noise_sd_degC,
                                                                           params.spec.shape)
        if params.nodata_rate > 0:
            drop = np.random.default_rng([params.seed, position, NODATA_STREAM]).random(params.spec.shape)
            field[drop < params.nodata_rate] = np.nan
        values[position] = field

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(build, range(len(periods))))
    else:
        for position in range(len(periods)):
            build(position)

    stack = RasterStack(params.spec, periods, values, params.cadence)
    sites = [SiteRecord(site.site_id, site.point, site.onset, 'synthetic') for site in params.sites]
    logger.info(f"Generated {len(periods)} {params.cadence} grids of {params.spec.nrows}x{params.spec.ncols} "
                f"with {len(sites)} sites (seed {params.seed}, {len(set(months))} months)")

    scenario = Scenario(stack, sites)
    if params.population is not None:
        scenario.population, scenario.population_spec = population_grid(params)
    return scenario


def population_spec_for(spec: GridSpec, population: PopulationParams) -> GridSpec:
    """Fine grid over the scenario extent whose dimensions divide by the coarsening factor."""
    factor, cellsize = population.factor, population.cellsize_deg
    ncols = factor * int(math.ceil(round(spec.ncols * spec.cellsize_deg / (cellsize * factor), 9)))
    nrows = factor * int(math.ceil(round(spec.nrows * spec.cellsize_deg / (cellsize * factor), 9)))
    yll = spec.top_deg - nrows * cellsize
    return GridSpec(ncols, nrows, spec.xll_deg, yll, cellsize)


def population_grid(params: ScenarioParams):
    """Poisson person counts around a background level and a few Gaussian towns."""
    population = params.population
    pop_spec = population_spec_for(params.spec, population)
    rng = np.random.default_rng([params.seed, POPULATION_STREAM])

    rows, cols = np.meshgrid(np.arange(pop_spec.nrows), np.arange(pop_spec.ncols), indexing='ij')
    lat, lon = center_coordinates(pop_spec, rows, cols)
    expected = np.full(pop_spec.shape, population.background_per_cell)
    for _ in range(population.towns):
        town = GeoPoint(float(rng.uniform(pop_spec.yll_deg, pop_spec.top_deg)),
                        float(rng.uniform(pop_spec.xll_deg, pop_spec.xll_deg + pop_spec.ncols * pop_spec.cellsize_deg)))
        distances = haversine_km_array(lat, lon, town)
        expected += population.town_peak_per_cell * np.exp(-distances ** 2 / (2.0 * population.town_sigma_km ** 2))
    counts = rng.poisson(expected).astype(np.float64)
    logger.info(f"Population grid {pop_spec.nrows}x{pop_spec.ncols}: {counts.sum():.0f} people, "
                f"{population.towns} towns")
    return counts, pop_spec


def expected_delta(params: ScenarioParams, site_id: str, r_km: float, k: int, dr_km: float = 1.0) -> float:
    """
    Closed-form start-of-operations increase on the ring containing r_km.

    Ring mean over cells of the footprint steps of every scenario site as
    seen by a k-month baseline, plus trend * (k + 1) / 2. The seasonal cycle
    is taken as removed; noise contributes nothing in expectation.
    """
    by_id = {site.site_id: site for site in params.sites}
    if site_id not in by_id:
        raise ValidationError(f"Unknown scenario site {site_id!r}", field='site_id')
    site = by_id[site_id]
    n = int(math.floor(r_km / dr_km))
    rings, _ = ring_partition(params.spec, RingSpec(site.point, (n + 1) * dr_km, dr_km))
    ring = rings[n]
    if len(ring) == 0:
        return float('nan')

    lat, lon = center_coordinates(params.spec, ring.rows, ring.cols)
    start = month_ordinal(site.onset)
    step = np.zeros(len(ring))
    for other in params.sites:
        lag = start - month_ordinal(other.onset)
        weight = (1.0 if lag >= 0 else 0.0) - min(k, max(0, lag)) / k
        if weight == 0.0:
            continue
        distances = haversine_km_array(lat, lon, other.point)
        step += weight * other.amplitude_degC * np.exp(-distances ** 2 / (2.0 * other.sigma_km ** 2))
    return float(np.mean(step)) + params.trend_degC_per_month * (k + 1) / 2.0


def write_scenario(out_dir, scenario: Scenario) -> Dict[str, Path]:
    """Write the stack, registry and population grid in the formats ingest reads."""
    out_dir = Path(out_dir)
    paths = {'stack_manifest': out_dir / 'manifest.json', 'sites_csv': out_dir / 'sites.csv'}
    write_stack(paths['stack_manifest'], scenario.stack)
    write_sites(paths['sites_csv'], scenario.sites)
    if scenario.population is not None:
        paths['population_grid'] = out_dir / 'population.asc'
        write_grid(paths['population_grid'], scenario.population, scenario.population_spec)
    logger.info(f"Scenario written to {out_dir}")
    return paths
