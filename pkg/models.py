"""
Domain types shared by every module of the pipeline.

Grids are carried as float64 numpy arrays; NODATA is normalized to NaN on load
and written back with the grid's sentinel.
"""

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Dict, List, Optional, Tuple

import numpy as np

from error_handlers import ValidationError

EARTH_RADIUS_KM = 6371.0088

MONTHLY = 'monthly'
DAILY = 'daily'
CADENCES = (MONTHLY, DAILY)


# Period labels

def month_ordinal(label: str) -> int:
    """Absolute month number of a 'YYYY-MM' (or 'YYYY-MM-DD') label."""
    try:
        year, month = int(label[0:4]), int(label[5:7])
    except (TypeError, ValueError):
        raise ValidationError(f"Unparsable period label: {label!r}", field='timeline')
    if len(label) < 7 or label[4] != '-' or not 1 <= month <= 12:
        raise ValidationError(f"Unparsable period label: {label!r}", field='timeline')
    return year * 12 + (month - 1)


def month_label(ordinal: int) -> str:
    return f"{ordinal // 12:04d}-{ordinal % 12 + 1:02d}"


def calendar_month(label: str) -> int:
    """Calendar month 0..11 of a period label."""
    return month_ordinal(label) % 12


def parse_day(label: str) -> date:
    try:
        return date.fromisoformat(label)
    except (TypeError, ValueError):
        raise ValidationError(f"Unparsable day label: {label!r}", field='timeline')


def month_range(start: str, months: int) -> List[str]:
    first = month_ordinal(start)
    return [month_label(first + n) for n in range(months)]


def days_of_month(label: str) -> List[str]:
    ordinal = month_ordinal(label)
    day = date(ordinal // 12, ordinal % 12 + 1, 1)
    days = []
    while day.month == ordinal % 12 + 1:
        days.append(day.isoformat())
        day += timedelta(days=1)
    return days


def period_ordinal(label: str, cadence: str) -> int:
    if cadence == DAILY:
        return parse_day(label).toordinal()
    return month_ordinal(label)


# grid-core

@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not (math.isfinite(self.lat_deg) and math.isfinite(self.lon_deg)):
            raise ValidationError("Coordinates must be finite", field='lat_deg')
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValidationError(f"Latitude out of range: {self.lat_deg}", field='lat_deg')
        if not -180.0 <= self.lon_deg < 180.0:
            raise ValidationError(f"Longitude out of range: {self.lon_deg}", field='lon_deg')

    def to_dict(self):
        return {'lat_deg': self.lat_deg, 'lon_deg': self.lon_deg}


@dataclass(frozen=True)
class GridSpec:
    ncols: int
    nrows: int
    xll_deg: float
    yll_deg: float
    cellsize_deg: float
    nodata: float = -9999.0

    def __post_init__(self):
        if self.ncols <= 0 or self.nrows <= 0:
            raise ValidationError("Grid must have at least one cell", field='ncols')
        if not (self.cellsize_deg > 0 and math.isfinite(self.cellsize_deg)):
            raise ValidationError(f"Cell size must be positive: {self.cellsize_deg}", field='cellsize_deg')
        if not math.isfinite(self.nodata):
            raise ValidationError("NODATA sentinel must be finite", field='nodata')
        if self.yll_deg < -90.0 or self.top_deg > 90.0 + 1e-9:
            raise ValidationError("Grid extends beyond the poles", field='yll_deg')
        if self.xll_deg < -180.0 or self.xll_deg + self.ncols * self.cellsize_deg > 180.0 + 1e-9:
            raise ValidationError("Grid extends beyond the antimeridian", field='xll_deg')

    @property
    def top_deg(self) -> float:
        return self.yll_deg + self.nrows * self.cellsize_deg

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nrows, self.ncols)

    def same_geometry(self, other: 'GridSpec') -> bool:
        """Equality ignoring the NODATA sentinel (it is normalized on load)."""
        return (self.ncols, self.nrows, self.xll_deg, self.yll_deg, self.cellsize_deg) == \
            (other.ncols, other.nrows, other.xll_deg, other.yll_deg, other.cellsize_deg)

    def to_dict(self):
        return {
            'ncols': self.ncols, 'nrows': self.nrows,
            'xll_deg': self.xll_deg, 'yll_deg': self.yll_deg,
            'cellsize_deg': self.cellsize_deg, 'nodata': self.nodata,
        }


@dataclass(frozen=True)
class RingSpec:
    """Concentric rings [n*dr, (n+1)*dr) around a center, clipped at r_max."""
    center: GeoPoint
    r_max_km: float
    dr_km: float

    def __post_init__(self):
        if not self.r_max_km > 0:
            raise ValidationError(f"r_max_km must be positive: {self.r_max_km}", field='r_max_km')
        if not self.dr_km > 0:
            raise ValidationError(f"dr_km must be positive: {self.dr_km}", field='dr_km')

    @property
    def n_rings(self) -> int:
        return max(1, math.ceil(self.r_max_km / self.dr_km - 1e-9))

    @property
    def rings(self) -> List[Tuple[float, float]]:
        bounds = []
        for n in range(self.n_rings):
            bounds.append((n * self.dr_km, min((n + 1) * self.dr_km, self.r_max_km)))
        return bounds

    @property
    def midpoints(self) -> List[float]:
        return [(lo + hi) / 2.0 for lo, hi in self.rings]

    def ring_index(self, distance_km: np.ndarray) -> np.ndarray:
        # a distance of exactly r_max belongs to the (closed) outermost ring
        index = np.floor(np.asarray(distance_km) / self.dr_km).astype(np.int64)
        return np.minimum(index, self.n_rings - 1)


# ingest

@dataclass
class RasterStack:
    spec: GridSpec
    timeline: List[str]
    values: np.ndarray
    cadence: str = MONTHLY
    variable: str = 'LST'
    units: str = 'degC'

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.timeline), self.spec.nrows, self.spec.ncols):
            raise ValidationError(
                f"Stack shape {self.values.shape} does not match timeline/spec "
                f"({len(self.timeline)}, {self.spec.nrows}, {self.spec.ncols})", field='spec')

    def __len__(self):
        return len(self.timeline)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def index_of(self, label: str) -> int:
        """Position of a month on a contiguous monthly timeline (may fall outside)."""
        return month_ordinal(label) - month_ordinal(self.timeline[0])

    def densify(self) -> 'RasterStack':
        """Contiguous monthly copy of a gapped monthly stack; missing months are NODATA."""
        if self.cadence != MONTHLY:
            return self
        ordinals = [month_ordinal(label) for label in self.timeline]
        span = ordinals[-1] - ordinals[0] + 1
        if span == len(ordinals):
            return self
        values = np.full((span,) + self.spec.shape, np.nan)
        for position, ordinal in enumerate(ordinals):
            values[ordinal - ordinals[0]] = self.values[position]
        return RasterStack(self.spec, month_range(self.timeline[0], span), values,
                           self.cadence, self.variable, self.units)

    def with_values(self, values: np.ndarray, timeline: Optional[List[str]] = None,
                    cadence: Optional[str] = None) -> 'RasterStack':
        return RasterStack(self.spec, list(timeline if timeline is not None else self.timeline), values,
                           cadence or self.cadence, self.variable, self.units)


@dataclass
class StackManifest:
    variable: str
    units: str
    cadence: str
    spec: GridSpec
    timeline: List[str]
    files: List[str]
    gaps_allowed: bool = False

    def to_dict(self):
        return {
            'variable': self.variable, 'units': self.units, 'cadence': self.cadence,
            'spec': self.spec.to_dict(), 'timeline': list(self.timeline),
            'files': list(self.files), 'gaps_allowed': self.gaps_allowed,
        }


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    point: GeoPoint
    start_of_operations: str
    provider: Optional[str] = None

    def to_dict(self):
        return {
            'site_id': self.site_id, 'lat_deg': self.point.lat_deg, 'lon_deg': self.point.lon_deg,
            'start_of_operations': self.start_of_operations, 'provider': self.provider or '',
        }


# preprocess

@dataclass
class Climatology:
    spec: GridSpec
    grids: np.ndarray  # (12, nrows, ncols), NaN where under-sampled
    window: List[str]


@dataclass
class SiteValidity:
    site_id: str
    keep: bool
    reason_code: str
    valid_fraction: float


# anomaly

@dataclass
class RingSeries:
    site_id: str
    r_mid_km: float
    values: np.ndarray
    counts: np.ndarray
    members: List[Tuple[int, int, float]] = field(default_factory=list)


@dataclass
class EpochDeltaSeries:
    site_id: str
    k: int
    horizon: int
    values: np.ndarray  # length 2H+1, index i+H
    insufficient_history: bool = False

    @property
    def offsets(self) -> List[int]:
        return list(range(-self.horizon, self.horizon + 1))

    def at(self, i: int) -> float:
        return float(self.values[i + self.horizon])


@dataclass
class AggregateBand:
    offsets: List[int]
    mean: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    n_sites: np.ndarray
    quantiles: Tuple[float, float] = (0.025, 0.975)

    def row(self, i: int) -> Dict[str, float]:
        j = self.offsets.index(i)
        return {
            'mean': float(self.mean[j]), 'min': float(self.minimum[j]), 'max': float(self.maximum[j]),
            'p_lo': float(self.p_lo[j]), 'p_hi': float(self.p_hi[j]), 'n_sites': int(self.n_sites[j]),
        }


@dataclass
class RadialProfile:
    r_mid_km: np.ndarray
    mean: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    n_sites: np.ndarray
    r_max_km: float
    dr_km: float
    k: int
    quantiles: Tuple[float, float] = (0.025, 0.975)


@dataclass
class DecayMetrics:
    d_fraction_km: Optional[float]
    d_abs_km: Optional[float]
    fraction: float
    abs_level_degC: float
    peak_degC: float
    fraction_status: str = 'ok'
    abs_status: str = 'ok'

    def to_dict(self):
        return {
            'd_fraction_km': self.d_fraction_km, 'd_abs_km': self.d_abs_km,
            'fraction': self.fraction, 'abs_level_degC': self.abs_level_degC,
            'peak_degC': self.peak_degC,
            'fraction_status': self.fraction_status, 'abs_status': self.abs_status,
        }


# exposure

@dataclass
class ExposureHistogram:
    edges: np.ndarray
    counts: np.ndarray
    dedup: str
    r_max_km: float
    bin_width: float
    nodata_cells: int = 0
    dropped_negative: float = 0.0

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))


# synth

@dataclass(frozen=True)
class ScenarioSite:
    site_id: str
    point: GeoPoint
    onset: str
    amplitude_degC: float = 2.0
    sigma_km: float = 4.51

    def __post_init__(self):
        if not self.sigma_km > 0:
            raise ValidationError(f"sigma_km must be positive: {self.sigma_km}", field='sigma_km')
        if not math.isfinite(self.amplitude_degC):
            raise ValidationError("Amplitude must be finite", field='amplitude_degC')


@dataclass(frozen=True)
class PopulationParams:
    cellsize_deg: float = 0.001
    factor: int = 10
    background_per_cell: float = 0.5
    towns: int = 6
    town_peak_per_cell: float = 40.0
    town_sigma_km: float = 2.0


@dataclass
class ScenarioParams:
    spec: GridSpec
    timeline: List[str]
    sites: List[ScenarioSite]
    base_degC: float = 20.0
    seasonal_amp_degC: float = 5.0
    seasonal_phase_month: float = 6.0
    trend_degC_per_month: float = 0.0
    noise_sd_degC: float = 0.0
    seed: int = 42
    cadence: str = MONTHLY
    nodata_rate: float = 0.0
    population: Optional[PopulationParams] = None
