"""Builders shared by the test modules"""

import numpy as np

from models import GeoPoint, GridSpec, RasterStack, SiteRecord, month_range


def equatorial_spec(n=11, cellsize=0.01, xll=10.0, yll=0.0):
    return GridSpec(n, n, xll, yll, cellsize)


def center_of(spec):
    """Center of the middle cell of an odd-sized grid."""
    return GeoPoint(spec.yll_deg + spec.nrows * spec.cellsize_deg / 2.0,
                    spec.xll_deg + spec.ncols * spec.cellsize_deg / 2.0)


def uniform_stack(spec, series, start='2010-01'):
    """Every cell follows the same monthly series."""
    series = np.asarray(series, dtype=np.float64)
    values = np.broadcast_to(series[:, None, None], (len(series),) + spec.shape).copy()
    return RasterStack(spec, month_range(start, len(series)), values)


def step_series(months, onset_index, size=2.0, before=0.0):
    series = np.full(months, before)
    series[onset_index:] += size
    return series


def site(site_id, point, start):
    return SiteRecord(site_id, point, start)
