"""
heatring command line

Subcommands run one pipeline stage each and read the previous stage's files
from the output directory:

    synth       synthetic scenario -> out/synth
    preprocess  monthly aggregation, deseasonalization, outlier masking, site filters -> out/preprocess
    epoch       epoch-aligned deltas, cross-site band, k sweep -> out/epoch
    radial      ring deltas, radial profile, decay distances -> out/radial
    exposure    population histogram by experienced increase -> out/exposure
    report      SVG charts of the above -> out/report
    run         all of the above in order

Exit codes: 0 ok, 1 unexpected failure, 2 missing input, 3 validation,
4 insufficient history. Errors are also printed to stderr as JSON.
"""

import argparse
import json
import logging
import math
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd
from dotenv import load_dotenv

import charts
from anomaly import AnomalyEngine, decay_metrics, headline, profile_from_deltas, quantile_label
from error_handlers import (EXIT_OK, ErrorHandler, InsufficientHistoryError, MissingInputError, UndefinedMetricsError,
                            UsageError, ValidationError)
from exposure import coarsen_population, exposure_histogram, exposure_summary
from models import DAILY, GeoPoint, RingSpec
from monitoring import StageTimer, setup_logging
from preprocess import (climatology, default_climatology_window, deseasonalize, mask_outliers, monthly_from_daily,
                        urban_filter, write_diagnostics)
from raster_io import load_grid, load_sites, load_stack, write_sites, write_stack
from run_config import RunConfig, load_run_config
from synth import generate, params_from_config, write_scenario
from validators import ScenarioSchema, load_with

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9
CSV_FLOAT_FORMAT = '%.9g'


# Result files

def _plain(value: Any) -> Any:
    """JSON-ready copy: 9 significant digits, NaN and inf as null"""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, document: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(_plain(document), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_csv(path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator='\n', float_format=CSV_FLOAT_FORMAT, na_rep='')
    return path


def read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Upstream output not found: {path}; run the previous stage first", field='path')
    return pd.read_csv(path)


def echo_config(config: RunConfig, stage_dir: Path) -> None:
    document = config.to_dict()
    # results do not depend on the worker count
    document.pop('workers')
    write_json(stage_dir / 'effective_config.json', document)


def _engine(config: RunConfig, anom, sites) -> AnomalyEngine:
    return AnomalyEngine(anom, sites, k=config.k, horizon=config.horizon, dr_km=config.dr_km,
                         r_max_km=config.r_max_km, min_valid_fraction=config.min_valid_fraction,
                         center_cell_only=config.center_cell_only, band=config.band, workers=config.workers)


def _cleaned_inputs(config: RunConfig):
    """The preprocess stage's anomaly stack and kept sites."""
    stage = config.output_dir('preprocess')
    anom = load_stack(stage / 'manifest.json', workers=config.workers)
    sites = load_sites(stage / 'sites_kept.csv')
    if not sites:
        raise InsufficientHistoryError(
            f"No site passed the preprocess filters (see {stage / 'site_diagnostics.csv'})", field='sites')
    return anom, sites


def _band_frame(index_name: str, index: List, values_mean, values_min, values_max, p_lo, p_hi, n_sites,
                quantiles) -> pd.DataFrame:
    return pd.DataFrame({
        index_name: index,
        'mean': values_mean,
        'min': values_min,
        'max': values_max,
        quantile_label(quantiles[0]): p_lo,
        quantile_label(quantiles[1]): p_hi,
        'n_sites': n_sites,
    })


# Subcommands

def cmd_synth(config: RunConfig) -> Dict[str, Path]:
    stage = config.output_dir('synth')
    scenario_config = load_with(ScenarioSchema(), config.scenario or {}, prefix='scenario')
    with StageTimer('synth', seed=config.seed, workers=config.workers):
        scenario = generate(params_from_config(scenario_config, seed=config.seed), workers=config.workers)
        paths = write_scenario(stage, scenario)
    echo_config(config, stage)
    return paths


def cmd_preprocess(config: RunConfig) -> Dict[str, Any]:
    config.require('stack_manifest', 'sites_csv')
    stage = config.output_dir('preprocess')
    with StageTimer('preprocess', k=config.k, horizon=config.horizon):
        stack = load_stack(config.stack_manifest, workers=config.workers)
        if stack.cadence == DAILY:
            stack = monthly_from_daily(stack, config.min_valid_days)
        stack = stack.densify()
        sites = load_sites(config.sites_csv)

        excluded = []
        candidates = sites
        if config.population_grid:
            config.require('population_grid')
            population, pop_spec = load_grid(config.population_grid)
            coarse, coarse_spec, _ = coarsen_population(population, pop_spec, config.population_factor)
            candidates, excluded = urban_filter(sites, coarse, coarse_spec, config.urban_radius_km,
                                                config.density_threshold)

        window = tuple(config.climatology_window) if config.climatology_window else \
            default_climatology_window(stack, candidates, config.k)
        if config.deseasonalize:
            clim = climatology(stack, window, config.min_samples)
            anom = replace(deseasonalize(stack, clim), variable='LST_ANOMALY')
        else:
            anom = stack
        masked = mask_outliers(anom, config.mad_k, config.outlier_window_months)
        outliers = int(np.count_nonzero(np.isnan(masked.values) & ~np.isnan(anom.values)))

        validities = _engine(config, masked, candidates).validity()
        kept_ids = {v.site_id for v in validities if v.keep}
        kept = [site for site in sorted(candidates, key=lambda s: s.site_id) if site.site_id in kept_ids]

        write_stack(stage / 'manifest.json', masked)
        write_sites(stage / 'sites_kept.csv', kept)
        write_diagnostics(stage / 'site_diagnostics.csv', excluded + validities)

    reasons = Counter(v.reason_code for v in excluded + validities if not v.keep)
    summary = {
        'sites_total': len(sites),
        'sites_outside_dense_urban': len(candidates),
        'sites_valid': len(kept),
        'excluded_by_reason': dict(sorted(reasons.items())),
        'climatology_window': list(window) if config.deseasonalize else None,
        'deseasonalized': config.deseasonalize,
        'outliers_masked': outliers,
        'months': len(masked),
    }
    logger.info(f"Site funnel: {len(sites)} total -> {len(candidates)} outside dense urban -> {len(kept)} valid")
    write_json(stage / 'preprocess_summary.json', summary)
    echo_config(config, stage)
    return summary


def cmd_epoch(config: RunConfig) -> Dict[str, Any]:
    stage = config.output_dir('epoch')
    anom, sites = _cleaned_inputs(config)
    with StageTimer('epoch', sites=len(sites), k=config.k):
        engine = _engine(config, anom, sites)
        series = engine.epoch_series()
        if not series:
            raise InsufficientHistoryError("No site has a usable center series", field='sites')
        band = engine.epoch_band(series)
        sweep, diagnostics = engine.sweep(config.k_list)

    write_csv(stage / 'epoch_band.csv', _band_frame(
        'i', band.offsets, band.mean, band.minimum, band.maximum, band.p_lo, band.p_hi, band.n_sites,
        band.quantiles))
    write_csv(stage / 'epoch_sites.csv', pd.DataFrame(
        [(s.site_id, i, s.at(i)) for s in series for i in s.offsets], columns=['site_id', 'i', 'delta_degC']))
    write_csv(stage / 'table_sweep.csv', pd.DataFrame(
        [(row.k, row.average, row.minimum, row.maximum, row.n_sites) for row in sweep],
        columns=['k', 'average', 'minimum', 'maximum', 'n_sites']))
    write_csv(stage / 'sweep_diagnostics.csv', pd.DataFrame(diagnostics, columns=['site_id', 'k', 'reason_code']))

    summary = headline(band)
    summary.update({'k': config.k, 'horizon': config.horizon, 'band': config.band,
                    'sites_with_history_gaps': sum(1 for s in series if s.insufficient_history)})
    write_json(stage / 'epoch_summary.json', summary)
    echo_config(config, stage)
    return summary


def cmd_radial(config: RunConfig) -> Dict[str, Any]:
    stage = config.output_dir('radial')
    anom, sites = _cleaned_inputs(config)
    with StageTimer('radial', sites=len(sites), r_max_km=config.r_max_km, dr_km=config.dr_km):
        engine = _engine(config, anom, sites)
        deltas = engine.ring_deltas()
        profile = engine.radial(deltas)

    write_csv(stage / 'radial_profile.csv', _band_frame(
        'r_mid_km', list(profile.r_mid_km), profile.mean, profile.minimum, profile.maximum,
        profile.p_lo, profile.p_hi, profile.n_sites, profile.quantiles))
    midpoints = engine.midpoints()
    write_csv(stage / 'site_profiles.csv', pd.DataFrame(
        [(site_id, midpoints[n], deltas[site_id][n]) for site_id in sorted(deltas) for n in range(len(midpoints))],
        columns=['site_id', 'r_mid_km', 'delta_degC']))

    try:
        metrics = decay_metrics(profile, config.fraction, config.abs_level_degC).to_dict()
        metrics['status'] = 'ok'
    except UndefinedMetricsError as e:
        logger.warning(f"Decay metrics undefined: {e.message}")
        metrics = {'status': 'undefined', 'message': e.message, 'fraction': config.fraction,
                   'abs_level_degC': config.abs_level_degC, 'd_fraction_km': None, 'd_abs_km': None}
    metrics.update({'r_max_km': config.r_max_km, 'dr_km': config.dr_km, 'k': config.k})
    write_json(stage / 'decay_metrics.json', metrics)
    echo_config(config, stage)
    return metrics


def _site_profiles(config: RunConfig):
    frame = read_csv(config.output_dir('radial') / 'site_profiles.csv')
    midpoints = RingSpec(GeoPoint(0.0, 0.0), config.r_max_km, config.dr_km).midpoints
    profiles = {}
    for site_id, rows in frame.groupby('site_id', sort=True):
        radii = rows['r_mid_km'].to_numpy(dtype=np.float64)
        if len(radii) != len(midpoints) or not np.allclose(radii, midpoints, atol=1e-6):
            raise ValidationError(f"Radial profiles were computed with other rings than r_max_km={config.r_max_km}, "
                                  f"dr_km={config.dr_km}; rerun radial", field='r_max_km')
        values = rows['delta_degC'].to_numpy(dtype=np.float64)
        if np.all(np.isnan(values)):
            continue
        profiles[str(site_id)] = profile_from_deltas({str(site_id): values}, midpoints, config.r_max_km,
                                                     config.dr_km, config.k)
    return profiles


def cmd_exposure(config: RunConfig) -> Dict[str, Any]:
    config.require('population_grid')
    stage = config.output_dir('exposure')
    sites = load_sites(config.output_dir('preprocess') / 'sites_kept.csv')
    profiles = _site_profiles(config)
    with StageTimer('exposure', sites=len(profiles), dedup=config.dedup):
        population, pop_spec = load_grid(config.population_grid)
        coarse, coarse_spec, fine_nodata = coarsen_population(population, pop_spec, config.population_factor)
        hist = exposure_histogram(sites, profiles, coarse, coarse_spec, config.r_max_km, config.bin_width,
                                  config.dedup, config.workers)

    write_csv(stage / 'exposure_histogram.csv', pd.DataFrame({
        'bin_lo_degC': hist.edges[:-1], 'bin_hi_degC': hist.edges[1:], 'population': hist.counts}))
    summary = exposure_summary(hist)
    summary['nodata_fine_population_cells'] = fine_nodata
    write_json(stage / 'exposure_summary.json', summary)
    echo_config(config, stage)
    return summary


def cmd_report(config: RunConfig) -> List[Path]:
    stage = config.output_dir('report')
    band = read_csv(config.output_dir('epoch') / 'epoch_band.csv')
    profile = read_csv(config.output_dir('radial') / 'radial_profile.csv')
    with open(_existing(config.output_dir('radial') / 'decay_metrics.json'), 'r', encoding='utf-8') as f:
        metrics = json.load(f)

    charts_written = [
        charts.epoch_chart(band, stage / 'epoch_band.svg', config.k),
        charts.radial_chart(profile, stage / 'radial_profile.svg', metrics.get('d_fraction_km'),
                            metrics.get('d_abs_km')),
    ]
    histogram_path = config.output_dir('exposure') / 'exposure_histogram.csv'
    if histogram_path.is_file():
        charts_written.append(charts.exposure_chart(read_csv(histogram_path), stage / 'exposure_histogram.svg'))
    else:
        logger.info("No exposure histogram; exposure chart skipped")
    echo_config(config, stage)
    return charts_written


def cmd_run(config: RunConfig) -> None:
    """Full chain; generates a synthetic scenario first when no stack is configured"""
    if config.scenario is not None or not config.stack_manifest:
        paths = cmd_synth(config)
        config = replace(config, stack_manifest=str(paths['stack_manifest']), sites_csv=str(paths['sites_csv']),
                         population_grid=str(paths['population_grid']) if 'population_grid' in paths else None)
    cmd_preprocess(config)
    cmd_epoch(config)
    cmd_radial(config)
    if config.population_grid:
        cmd_exposure(config)
    cmd_report(config)


def _existing(path: Path) -> Path:
    if not path.is_file():
        raise MissingInputError(f"Upstream output not found: {path}; run the previous stage first", field='path')
    return path


COMMANDS = {
    'synth': cmd_synth,
    'preprocess': cmd_preprocess,
    'epoch': cmd_epoch,
    'radial': cmd_radial,
    'exposure': cmd_exposure,
    'report': cmd_report,
    'run': cmd_run,
}

HELP = {
    'synth': 'generate a synthetic scenario',
    'preprocess': 'clean the LST stack and filter sites',
    'epoch': 'epoch-aligned deltas and the k sweep',
    'radial': 'radial profile and decay distances',
    'exposure': 'population by experienced increase',
    'report': 'SVG charts of the results',
    'run': 'the whole chain',
}


# Argument parsing

class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises a usage error instead of exiting"""

    def error(self, message):
        raise UsageError(message, field='argv')


def build_parser() -> argparse.ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run configuration')
    common.add_argument('--stack-manifest', dest='stack_manifest', help='LST stack manifest (JSON)')
    common.add_argument('--sites-csv', dest='sites_csv', help='site registry CSV')
    common.add_argument('--population-grid', dest='population_grid', help='population counts (ESRI ASCII grid)')
    common.add_argument('--out-dir', dest='out_dir', help='output directory')
    common.add_argument('--k', type=int, help='baseline window in months')
    common.add_argument('--horizon', type=int, help='epoch horizon H in months')
    common.add_argument('--dr-km', dest='dr_km', type=float, help='ring width')
    common.add_argument('--r-max-km', dest='r_max_km', type=float, help='outer ring radius')
    common.add_argument('--bin-width', dest='bin_width', type=float, help='exposure bin width in degC')
    common.add_argument('--dedup', choices=['max', 'per-site'], help='overlapping sites policy')
    common.add_argument('--band', choices=['central95', 'upper95'], help='quantile band across sites')
    common.add_argument('--no-deseasonalize', dest='deseasonalize', action='store_const', const=False,
                        help='analyze raw LST instead of anomalies')
    common.add_argument('--center-cell-only', dest='center_cell_only', action='store_const', const=True,
                        help='use only the containing cell as r = 0')
    common.add_argument('--workers', type=int, help='worker threads')
    common.add_argument('--seed', type=int, help='scenario seed')
    common.add_argument('--log-level', dest='log_level', help='DEBUG, INFO, WARNING or ERROR')

    parser = ArgumentParser(prog='heatring', description='Land surface temperature heat rings around data centres')
    subcommands = parser.add_subparsers(dest='command', metavar='command')
    subcommands.required = True
    for name in COMMANDS:
        subcommands.add_parser(name, parents=[common], help=HELP[name])
    return parser


OVERRIDE_KEYS = ('stack_manifest', 'sites_csv', 'population_grid', 'out_dir', 'k', 'horizon', 'dr_km', 'r_max_km',
                 'bin_width', 'dedup', 'band', 'deseasonalize', 'center_cell_only', 'workers', 'seed')


def main(argv=None) -> int:
    load_dotenv()
    setup_logging()
    handler = ErrorHandler()
    try:
        args = build_parser().parse_args(argv)
        if args.log_level:
            setup_logging(args.log_level)
        overrides = {key: getattr(args, key) for key in OVERRIDE_KEYS}
        config = load_run_config(args.config, overrides)
        logger.info(f"Running {args.command}")
        COMMANDS[args.command](config)
    except Exception as e:
        return handler.handle(e)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
