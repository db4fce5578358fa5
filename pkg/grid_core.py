"""
Grid geometry, great-circle distance and disk/ring membership.

Membership is decided on cell centers. Results are ordered by
(distance, row, col) so every downstream reduction is reproducible.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from error_handlers import GridIndexError, ValidationError
from models import EARTH_RADIUS_KM, GeoPoint, GridSpec, RingSpec


def cell_center(spec: GridSpec, row: int, col: int) -> GeoPoint:
    """Center of cell (row, col); row 0 is the northernmost row."""
    if not (0 <= row < spec.nrows and 0 <= col < spec.ncols):
        raise GridIndexError(f"Cell ({row}, {col}) outside {spec.nrows}x{spec.ncols} grid")
    lon = spec.xll_deg + (col + 0.5) * spec.cellsize_deg
    lat = spec.yll_deg + (spec.nrows - row - 0.5) * spec.cellsize_deg
    return GeoPoint(lat, lon)


def center_coordinates(spec: GridSpec, rows: np.ndarray, cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized cell centers; indices may lie outside the grid (virtual lattice)."""
    lat = spec.yll_deg + (spec.nrows - np.asarray(rows, dtype=np.float64) - 0.5) * spec.cellsize_deg
    lon = spec.xll_deg + (np.asarray(cols, dtype=np.float64) + 0.5) * spec.cellsize_deg
    return lat, lon


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    phi1, phi2 = math.radians(a.lat_deg), math.radians(b.lat_deg)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon_deg) - math.radians(a.lon_deg)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def haversine_km_array(lat_deg, lon_deg, center: GeoPoint) -> np.ndarray:
    """Distance from center to every (lat, lon) pair, same formula as haversine_km."""
    phi1 = math.radians(center.lat_deg)
    phi2 = np.radians(lat_deg)
    dphi = phi2 - phi1
    dlam = np.radians(lon_deg) - math.radians(center.lon_deg)
    h = np.sin(dphi / 2.0) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(1.0, h)))


def cell_area_km2(spec: GridSpec, row: int) -> float:
    """Area of a cell of the given row on the sphere."""
    north = math.radians(spec.yll_deg + (spec.nrows - row) * spec.cellsize_deg)
    south = math.radians(spec.yll_deg + (spec.nrows - row - 1) * spec.cellsize_deg)
    return EARTH_RADIUS_KM ** 2 * math.radians(spec.cellsize_deg) * (math.sin(north) - math.sin(south))


def locate_cell(spec: GridSpec, point: GeoPoint):
    """(row, col) of the cell containing point, or None outside the grid."""
    if not (spec.yll_deg <= point.lat_deg <= spec.top_deg):
        return None
    east = spec.xll_deg + spec.ncols * spec.cellsize_deg
    if not (spec.xll_deg <= point.lon_deg <= east):
        return None
    row = int(math.floor((spec.top_deg - point.lat_deg) / spec.cellsize_deg))
    col = int(math.floor((point.lon_deg - spec.xll_deg) / spec.cellsize_deg))
    return min(max(row, 0), spec.nrows - 1), min(max(col, 0), spec.ncols - 1)


@dataclass
class DiskMembership:
    rows: np.ndarray
    cols: np.ndarray
    distances: np.ndarray
    coverage: float

    def __len__(self):
        return len(self.rows)

    @property
    def cells(self) -> List[Tuple[int, int, float]]:
        return [(int(r), int(c), float(d)) for r, c, d in zip(self.rows, self.cols, self.distances)]

    def subset(self, mask: np.ndarray) -> 'DiskMembership':
        return DiskMembership(self.rows[mask], self.cols[mask], self.distances[mask], self.coverage)


def _candidate_window(spec: GridSpec, center: GeoPoint, r_km: float):
    """Row/col index ranges of the (virtual) lattice that can hold disk members."""
    rho = r_km / EARTH_RADIUS_KM
    dlat = math.degrees(rho)
    cs = spec.cellsize_deg

    north = min(90.0, center.lat_deg + dlat)
    south = max(-90.0, center.lat_deg - dlat)
    row_lo = int(math.floor((spec.top_deg - north) / cs - 0.5)) - 1
    row_hi = int(math.ceil((spec.top_deg - south) / cs - 0.5)) + 1
    # keep virtual rows on the globe
    row_lo = max(row_lo, int(math.ceil((spec.top_deg - 90.0) / cs - 0.5)))
    row_hi = min(row_hi, int(math.floor((spec.top_deg + 90.0) / cs - 0.5)))

    cos_lat = math.cos(math.radians(center.lat_deg))
    if rho >= math.pi / 2 or cos_lat <= math.sin(rho):
        dlon = 180.0
    else:
        dlon = math.degrees(math.asin(math.sin(rho) / cos_lat))
    col_lo = int(math.floor((center.lon_deg - dlon - spec.xll_deg) / cs - 0.5)) - 1
    col_hi = int(math.ceil((center.lon_deg + dlon - spec.xll_deg) / cs - 0.5)) + 1
    if dlon >= 180.0:
        col_lo = min(col_lo, 0)
        col_hi = max(col_hi, spec.ncols - 1)
    return row_lo, row_hi, col_lo, col_hi


def cells_within_radius(spec: GridSpec, center: GeoPoint, r_km: float) -> DiskMembership:
    """
    Cells whose center lies within r_km of center. A zero radius yields the
    cell containing center, at its center-to-center distance. The disk is
    evaluated on the grid's lattice extended past its edges; coverage is the
    fraction of that lattice disk falling inside the grid.
    """
    if not r_km >= 0:
        raise ValidationError(f"Radius must be non-negative: {r_km}", field='r_km')

    row_lo, row_hi, col_lo, col_hi = _candidate_window(spec, center, r_km)
    rows, cols = np.meshgrid(np.arange(row_lo, row_hi + 1), np.arange(col_lo, col_hi + 1), indexing='ij')
    rows, cols = rows.ravel(), cols.ravel()
    lat, lon = center_coordinates(spec, rows, cols)
    distances = haversine_km_array(lat, lon, center)

    member = distances <= r_km
    inside = (rows >= 0) & (rows < spec.nrows) & (cols >= 0) & (cols < spec.ncols)

    containing = locate_cell(spec, center)
    if r_km == 0 and containing is not None:
        member |= (rows == containing[0]) & (cols == containing[1])

    lattice_count = int(np.count_nonzero(member))
    keep = member & inside
    if lattice_count:
        coverage = np.count_nonzero(keep) / lattice_count
    else:
        coverage = 1.0 if containing is not None else 0.0

    rows, cols, distances = rows[keep], cols[keep], distances[keep]
    order = np.lexsort((cols, rows, distances))
    return DiskMembership(rows[order].astype(np.int64), cols[order].astype(np.int64), distances[order], float(coverage))


def ring_partition(spec: GridSpec, ring: RingSpec) -> Tuple[List[DiskMembership], float]:
    """Split the r_max disk into rings by floor(distance / dr); returns (rings, coverage)."""
    disk = cells_within_radius(spec, ring.center, ring.r_max_km)
    index = ring.ring_index(disk.distances)
    rings = [disk.subset(index == n) for n in range(ring.n_rings)]
    return rings, disk.coverage
