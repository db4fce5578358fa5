"""
Input validation
marshmallow schemas for stack manifests, site registry rows, run configs and
synthetic scenarios
"""

from marshmallow import (EXCLUDE, Schema, ValidationError as SchemaError, fields, post_load,
                         validate, validates_schema)

from error_handlers import schema_error
from models import CADENCES, GridSpec, MONTHLY, StackManifest

MONTH_PATTERN = r'^\d{4}-(0[1-9]|1[0-2])$'
PERIOD_PATTERN = r'^\d{4}-(0[1-9]|1[0-2])(-(0[1-9]|[12]\d|3[01]))?$'


def load_with(schema, data, prefix=None):
    """Run a schema, converting marshmallow errors into ours"""
    try:
        return schema.load(data)
    except SchemaError as e:
        raise schema_error(e, prefix=prefix)


class GridSpecSchema(Schema):
    ncols = fields.Int(required=True, strict=True, validate=validate.Range(min=1))
    nrows = fields.Int(required=True, strict=True, validate=validate.Range(min=1))
    xll_deg = fields.Float(required=True, validate=validate.Range(min=-180.0, max=180.0))
    yll_deg = fields.Float(required=True, validate=validate.Range(min=-90.0, max=90.0))
    cellsize_deg = fields.Float(required=True, validate=validate.Range(min=0.0, min_inclusive=False))
    nodata = fields.Float(load_default=-9999.0)

    @post_load
    def make_spec(self, data, **kwargs):
        return GridSpec(**data)


class ManifestSchema(Schema):
    variable = fields.Str(required=True, validate=validate.Length(min=1))
    units = fields.Str(required=True)
    cadence = fields.Str(required=True, validate=validate.OneOf(CADENCES))
    spec = fields.Nested(GridSpecSchema, required=True)
    timeline = fields.List(fields.Str(validate=validate.Regexp(PERIOD_PATTERN, error="Not a period label")),
                           required=True, validate=validate.Length(min=1))
    files = fields.List(fields.Str(validate=validate.Length(min=1)), required=True)
    gaps_allowed = fields.Bool(load_default=False)

    @validates_schema
    def check_files(self, data, **kwargs):
        if len(data['files']) != len(data['timeline']):
            raise SchemaError("files and timeline must have the same length", 'files')
        label_length = 7 if data['cadence'] == MONTHLY else 10
        for label in data['timeline']:
            if len(label) != label_length:
                raise SchemaError(f"Label {label!r} does not match cadence {data['cadence']}", 'timeline')

    @post_load
    def make_manifest(self, data, **kwargs):
        return StackManifest(**data)


class SiteRowSchema(Schema):
    class Meta:
        unknown = EXCLUDE

    site_id = fields.Str(required=True, validate=validate.Length(min=1, max=200))
    lat_deg = fields.Float(required=True, validate=validate.Range(min=-90.0, max=90.0))
    lon_deg = fields.Float(required=True, validate=validate.Range(min=-180.0, max=180.0, max_inclusive=False))
    start_of_operations = fields.Str(required=True, validate=validate.Regexp(
        MONTH_PATTERN, error="Start of operations must be a YYYY-MM month"))
    provider = fields.Str(load_default=None, allow_none=True)


class PopulationSchema(Schema):
    cellsize_deg = fields.Float(load_default=0.001, validate=validate.Range(min=0.0, min_inclusive=False))
    factor = fields.Int(load_default=10, validate=validate.Range(min=1))
    background_per_cell = fields.Float(load_default=0.5, validate=validate.Range(min=0.0))
    towns = fields.Int(load_default=6, validate=validate.Range(min=0))
    town_peak_per_cell = fields.Float(load_default=40.0, validate=validate.Range(min=0.0))
    town_sigma_km = fields.Float(load_default=2.0, validate=validate.Range(min=0.0, min_inclusive=False))


class ScenarioSchema(Schema):
    ncols = fields.Int(load_default=120, validate=validate.Range(min=1))
    nrows = fields.Int(load_default=120, validate=validate.Range(min=1))
    xll_deg = fields.Float(load_default=10.0, validate=validate.Range(min=-180.0, max=180.0))
    yll_deg = fields.Float(load_default=45.0, validate=validate.Range(min=-90.0, max=90.0))
    cellsize_deg = fields.Float(load_default=0.005, validate=validate.Range(min=0.0, min_inclusive=False))
    start = fields.Str(load_default='2010-01', validate=validate.Regexp(MONTH_PATTERN))
    months = fields.Int(load_default=132, validate=validate.Range(min=1))
    onset = fields.Str(load_default='2020-01', validate=validate.Regexp(MONTH_PATTERN))
    n_sites = fields.Int(load_default=10, validate=validate.Range(min=1))
    amplitude_degC = fields.Float(load_default=2.0)
    sigma_km = fields.Float(load_default=4.51, validate=validate.Range(min=0.0, min_inclusive=False))
    base_degC = fields.Float(load_default=20.0)
    seasonal_amp_degC = fields.Float(load_default=5.0)
    seasonal_phase_month = fields.Float(load_default=6.0)
    trend_degC_per_month = fields.Float(load_default=0.0)
    noise_sd_degC = fields.Float(load_default=0.5, validate=validate.Range(min=0.0))
    nodata_rate = fields.Float(load_default=0.0, validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    cadence = fields.Str(load_default=MONTHLY, validate=validate.OneOf(CADENCES))
    population = fields.Nested(PopulationSchema, load_default=None, allow_none=True)
    with_population = fields.Bool(load_default=True)


class RunConfigSchema(Schema):
    stack_manifest = fields.Str(load_default=None, allow_none=True)
    sites_csv = fields.Str(load_default=None, allow_none=True)
    population_grid = fields.Str(load_default=None, allow_none=True)
    out_dir = fields.Str(load_default='heatring_out')

    k = fields.Int(load_default=60, validate=validate.Range(min=1))
    horizon = fields.Int(load_default=10, validate=validate.Range(min=0))
    dr_km = fields.Float(load_default=1.0, validate=validate.Range(min=0.0, min_inclusive=False))
    r_max_km = fields.Float(load_default=10.0, validate=validate.Range(min=0.0, min_inclusive=False))
    k_list = fields.List(fields.Int(validate=validate.Range(min=1)), load_default=lambda: [12, 24, 36, 120],
                         validate=validate.Length(min=1))
    min_valid_days = fields.Int(load_default=8, validate=validate.Range(min=1, max=31))
    min_samples = fields.Int(load_default=3, validate=validate.Range(min=1))
    mad_k = fields.Float(load_default=3.0, validate=validate.Range(min=0.0, min_inclusive=False))
    outlier_window_months = fields.Int(load_default=13, validate=validate.Range(min=0))
    min_valid_fraction = fields.Float(load_default=0.5, validate=validate.Range(min=0.0, max=1.0, min_inclusive=False))
    climatology_window = fields.List(fields.Str(validate=validate.Regexp(MONTH_PATTERN)), load_default=None,
                                     allow_none=True, validate=validate.Length(equal=2))
    urban_radius_km = fields.Float(load_default=5.0, validate=validate.Range(min=0.0))
    density_threshold = fields.Float(load_default=1500.0, validate=validate.Range(min=0.0))
    population_factor = fields.Int(load_default=10, validate=validate.Range(min=1))
    bin_width = fields.Float(load_default=0.5, validate=validate.Range(min=0.0, min_inclusive=False))
    dedup = fields.Str(load_default='max', validate=validate.OneOf(['max', 'per-site']))
    band = fields.Str(load_default='central95', validate=validate.OneOf(['central95', 'upper95']))
    fraction = fields.Float(load_default=0.3, validate=validate.Range(min=0.0, max=1.0,
                                                                      min_inclusive=False, max_inclusive=False))
    abs_level_degC = fields.Float(load_default=1.0)
    deseasonalize = fields.Bool(load_default=True)
    center_cell_only = fields.Bool(load_default=False)
    workers = fields.Int(load_default=1, validate=validate.Range(min=1, max=256))
    seed = fields.Int(load_default=42, validate=validate.Range(min=0))
    scenario = fields.Nested(ScenarioSchema, load_default=None, allow_none=True)

    @validates_schema
    def check_rings(self, data, **kwargs):
        if data['r_max_km'] < data['dr_km']:
            raise SchemaError("r_max_km must be at least dr_km", 'r_max_km')
