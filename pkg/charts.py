"""
SVG charts for the report subcommand, drawn from the result CSVs.
Output carries no timestamp and uses a fixed id salt, so reruns are identical.
"""

import logging
from pathlib import Path
from typing import Optional, Tuple

import matplotlib

matplotlib.use('Agg')
matplotlib.rcParams['svg.hashsalt'] = 'heatring'
matplotlib.rcParams['svg.fonttype'] = 'none'

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from error_handlers import ValidationError  # noqa: E402

logger = logging.getLogger(__name__)

FIGSIZE = (7.0, 4.2)
BAND_COLOR = '#d95f02'
MEAN_COLOR = '#7f2704'


def _band_columns(frame: pd.DataFrame) -> Tuple[str, str]:
    bounds = [column for column in frame.columns if column.startswith('p') and column[1:2].isdigit()]
    if len(bounds) != 2:
        raise ValidationError(f"Expected two quantile columns, found {bounds}", field="columns")
    return bounds[0], bounds[1]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"Chart written: {path}")
    return path


def epoch_chart(band: pd.DataFrame, path, k: Optional[int] = None) -> Path:
    """Mean line over the min-max shading with quantile whiskers, against months from start of operations."""
    lo, hi = _band_columns(band)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.fill_between(band['i'], band['min'], band['max'], color=BAND_COLOR, alpha=0.2, linewidth=0, label='min-max')
    whiskers = [(band['mean'] - band[lo]).clip(lower=0), (band[hi] - band['mean']).clip(lower=0)]
    ax.errorbar(band['i'], band['mean'], yerr=whiskers,
                fmt='none', ecolor=BAND_COLOR, capsize=3, linewidth=1, label=f"{lo}-{hi}")
    ax.plot(band['i'], band['mean'], color=MEAN_COLOR, marker='o', markersize=3, linewidth=1.5, label='mean')
    ax.axvline(0, color='grey', linestyle='--', linewidth=0.8)
    ax.axhline(0, color='grey', linewidth=0.5)
    ax.set_xlabel('months from start of operations (i)')
    ax.set_ylabel('LST increase (°C)')
    ax.set_title('Temperature increase around start of operations' + (f" (k={k})" if k else ''))
    ax.legend(loc='upper left', frameon=False)
    return _save(fig, path)


def radial_chart(profile: pd.DataFrame, path, d_fraction_km: Optional[float] = None,
                 d_abs_km: Optional[float] = None) -> Path:
    lo, hi = _band_columns(profile)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.fill_between(profile['r_mid_km'], profile[lo], profile[hi], color=BAND_COLOR, alpha=0.2, linewidth=0,
                    label=f"{lo}-{hi}")
    ax.plot(profile['r_mid_km'], profile['mean'], color=MEAN_COLOR, marker='o', markersize=3, label='mean')
    for distance, style in ((d_fraction_km, ':'), (d_abs_km, '--')):
        if distance is not None:
            ax.axvline(distance, color='grey', linestyle=style, linewidth=0.8)
    ax.set_xlabel('distance from site (km)')
    ax.set_ylabel('LST increase (°C)')
    ax.set_title('Temperature increase as a function of distance')
    ax.legend(loc='upper right', frameon=False)
    return _save(fig, path)


def exposure_chart(histogram: pd.DataFrame, path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    widths = histogram['bin_hi_degC'] - histogram['bin_lo_degC']
    ax.bar(histogram['bin_lo_degC'], histogram['population'], width=widths, align='edge',
           color=BAND_COLOR, edgecolor=MEAN_COLOR, linewidth=0.5)
    ax.set_xlabel('LST increase (°C)')
    ax.set_ylabel('population')
    ax.set_title('Population by experienced LST increase')
    return _save(fig, path)
