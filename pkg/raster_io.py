"""
Readers and writers for raster stacks, site registries and population grids.

Rasters use the ESRI ASCII Grid format (row 0 = north); a stack is a JSON
manifest listing one grid file per period. Every byte stream either parses or
raises an error naming the offending location.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from error_handlers import (MissingInputError, MissingPeriodError, ParseError, SiteRegistryError,
                            SpecMismatchError, TimelineGapError, TimelineOrderError, ValidationError)
from models import GeoPoint, GridSpec, RasterStack, SiteRecord, StackManifest, period_ordinal
from validators import ManifestSchema, SiteRowSchema, load_with

logger = logging.getLogger(__name__)

HEADER_KEYS = ('ncols', 'nrows', 'xllcorner', 'yllcorner', 'cellsize', 'nodata_value')
SITE_COLUMNS = ('site_id', 'lat_deg', 'lon_deg', 'start_of_operations', 'provider')


def _format_number(value: float) -> str:
    """Shortest text that parses back to the identical float64."""
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


# ESRI ASCII grids

def _parse_header(lines: List[str], path) -> Tuple[GridSpec, float]:
    header = {}
    for number, line in enumerate(lines[:6], start=1):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"Header line must be 'KEY value', got {line.strip()!r}", path, number)
        key = parts[0].lower()
        if key not in HEADER_KEYS:
            raise ParseError(f"Unexpected header key {parts[0]!r}", path, number, 1)
        if key in header:
            raise ParseError(f"Duplicate header key {parts[0]!r}", path, number, 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(f"Header value {parts[1]!r} is not a number", path, number, 2)
    missing = [key.upper() for key in HEADER_KEYS if key not in header]
    if missing:
        raise ParseError(f"Header is missing {', '.join(missing)}", path, len(lines[:6]) + 1)
    for key in ('ncols', 'nrows'):
        if not header[key].is_integer() or header[key] < 1:
            raise ParseError(f"{key.upper()} must be a positive integer", path, HEADER_KEYS.index(key) + 1, 2)
    nodata = header['nodata_value']
    try:
        spec = GridSpec(int(header['ncols']), int(header['nrows']), header['xllcorner'],
                        header['yllcorner'], header['cellsize'], nodata)
    except ValidationError as e:
        raise ParseError(e.message, path, 1)
    return spec, nodata


def parse_grid(text: str, path=None) -> Tuple[np.ndarray, GridSpec]:
    lines = text.splitlines()
    if len(lines) < 6:
        raise ParseError("File is shorter than the 6-line header", path, len(lines) + 1)
    spec, nodata = _parse_header(lines, path)

    body = [(number, line) for number, line in enumerate(lines[6:], start=7) if line.strip()]
    if len(body) != spec.nrows:
        where = body[spec.nrows][0] if len(body) > spec.nrows else len(lines) + 1
        raise ParseError(f"Expected {spec.nrows} data rows, found {len(body)}", path, where)

    values = np.empty(spec.shape, dtype=np.float64)
    for row, (number, line) in enumerate(body):
        tokens = line.split()
        if len(tokens) != spec.ncols:
            raise ParseError(f"Expected {spec.ncols} values, found {len(tokens)}", path, number,
                             min(len(tokens), spec.ncols) + 1)
        try:
            values[row] = np.array(tokens, dtype=np.float64)
        except ValueError:
            for column, token in enumerate(tokens, start=1):
                try:
                    float(token)
                except ValueError:
                    raise ParseError(f"Non-numeric token {token!r}", path, number, column)
            raise
    values[values == nodata] = np.nan
    return values, spec


def load_grid(path) -> Tuple[np.ndarray, GridSpec]:
    """Read an ESRI ASCII grid; NODATA cells come back as NaN."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Grid file not found: {path}", field='path')
    with open(path, 'r', encoding='utf-8') as f:
        return parse_grid(f.read(), path)


def format_grid(values: np.ndarray, spec: GridSpec) -> str:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != spec.shape:
        raise SpecMismatchError(f"Grid shape {values.shape} does not match spec {spec.shape}", field='spec')
    nodata_text = _format_number(spec.nodata)
    lines = [
        f"NCOLS {spec.ncols}",
        f"NROWS {spec.nrows}",
        f"XLLCORNER {_format_number(spec.xll_deg)}",
        f"YLLCORNER {_format_number(spec.yll_deg)}",
        f"CELLSIZE {_format_number(spec.cellsize_deg)}",
        f"NODATA_VALUE {nodata_text}",
    ]
    for row in values.tolist():
        lines.append(' '.join(nodata_text if math.isnan(v) else _format_number(v) for v in row))
    return '\n'.join(lines) + '\n'


def write_grid(path, values: np.ndarray, spec: GridSpec) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(format_grid(values, spec))


# Stacks

def _check_timeline(manifest: StackManifest) -> None:
    ordinals = [period_ordinal(label, manifest.cadence) for label in manifest.timeline]
    for position in range(1, len(ordinals)):
        step = ordinals[position] - ordinals[position - 1]
        if step <= 0:
            raise TimelineOrderError(
                f"Timeline is not strictly increasing at {manifest.timeline[position]!r} "
                f"(after {manifest.timeline[position - 1]!r})", field='timeline')
        if step > 1 and not manifest.gaps_allowed:
            raise TimelineGapError(
                f"Gap between {manifest.timeline[position - 1]!r} and {manifest.timeline[position]!r} "
                f"while gaps_allowed is false", field='timeline')


def load_manifest(manifest_path) -> StackManifest:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingInputError(f"Stack manifest not found: {manifest_path}", field='stack_manifest')
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON: {e.msg}", manifest_path, e.lineno, e.colno)
    if not isinstance(document, dict):
        raise ValidationError("Manifest must be a JSON object", field='manifest')
    manifest = load_with(ManifestSchema(), document)
    _check_timeline(manifest)
    return manifest


def load_stack(manifest_path, workers: int = 1) -> RasterStack:
    """Load every period grid listed by a manifest and validate them against its spec."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    paths = [base / name for name in manifest.files]
    for label, path in zip(manifest.timeline, paths):
        if not path.is_file():
            raise MissingPeriodError(f"Missing grid for period {label}: {path}", field='files')

    logger.info(f"Loading {len(paths)} {manifest.cadence} grids from {manifest_path}")
    values = np.empty((len(paths),) + manifest.spec.shape, dtype=np.float64)

    def load_one(position):
        grid, spec = load_grid(paths[position])
        if not spec.same_geometry(manifest.spec):
            raise SpecMismatchError(
                f"Grid {paths[position]} has spec {spec.to_dict()} but the manifest declares "
                f"{manifest.spec.to_dict()}", field='spec', path=str(paths[position]))
        values[position] = grid

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # list() re-raises the first failure in timeline order
            list(pool.map(load_one, range(len(paths))))
    else:
        for position in range(len(paths)):
            load_one(position)

    return RasterStack(manifest.spec, list(manifest.timeline), values, manifest.cadence,
                       manifest.variable, manifest.units)


def write_stack(manifest_path, stack: RasterStack, grid_dir: str = 'grids', gaps_allowed: bool = False) -> StackManifest:
    """Write one grid per period plus the manifest that points at them."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    files = []
    for label, grid in zip(stack.timeline, stack.values):
        name = f"{grid_dir}/{stack.variable.lower()}_{label}.asc"
        write_grid(base / name, grid, stack.spec)
        files.append(name)
    manifest = StackManifest(stack.variable, stack.units, stack.cadence, stack.spec,
                             list(stack.timeline), files, gaps_allowed)
    base.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Wrote {len(files)} grids and manifest {manifest_path}")
    return manifest


# Site registries

def load_sites(path) -> List[SiteRecord]:
    """Read a site registry CSV; rows are validated and duplicate ids rejected."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Site registry not found: {path}", field='sites_csv')
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Unreadable CSV: {e}", path, 1)

    missing = [column for column in SITE_COLUMNS[:4] if column not in frame.columns]
    if missing:
        raise SiteRegistryError(f"Site registry lacks columns: {', '.join(missing)}", field=missing[0])

    sites, seen, duplicates = [], set(), []
    schema = SiteRowSchema()
    for position, row in enumerate(frame.to_dict(orient='records')):
        row = {key: value.strip() for key, value in row.items() if key in SITE_COLUMNS}
        if not row.get('provider'):
            row['provider'] = None
        try:
            data = load_with(schema, row)
        except ValidationError as e:
            # header is line 1
            raise SiteRegistryError(f"Line {position + 2}: {e.message}", field=e.field, line=position + 2)
        if data['site_id'] in seen:
            duplicates.append(data['site_id'])
            continue
        seen.add(data['site_id'])
        sites.append(SiteRecord(data['site_id'], GeoPoint(data['lat_deg'], data['lon_deg']),
                                data['start_of_operations'], data['provider']))
    if duplicates:
        raise SiteRegistryError(f"Duplicate site_id: {', '.join(sorted(set(duplicates)))}",
                                field='site_id', duplicates=sorted(set(duplicates)))
    logger.info(f"Loaded {len(sites)} sites from {path}")
    return sites


def write_sites(path, sites: List[SiteRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([site.to_dict() for site in sites], columns=list(SITE_COLUMNS))
    frame.to_csv(path, index=False, lineterminator="\n")

