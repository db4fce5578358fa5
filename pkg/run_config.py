"""
Run configuration
Built-in defaults, then an optional JSON config file, then HEATRING_OUT from
the environment (.env included), then command-line flags.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from error_handlers import MissingInputError, ParseError, ValidationError
from validators import RunConfigSchema, load_with

logger = logging.getLogger(__name__)

OUT_ENV = 'HEATRING_OUT'


@dataclass
class RunConfig:
    stack_manifest: Optional[str] = None
    sites_csv: Optional[str] = None
    population_grid: Optional[str] = None
    out_dir: str = 'heatring_out'

    k: int = 60
    horizon: int = 10
    dr_km: float = 1.0
    r_max_km: float = 10.0
    k_list: List[int] = field(default_factory=lambda: [12, 24, 36, 120])
    min_valid_days: int = 8
    min_samples: int = 3
    mad_k: float = 3.0
    outlier_window_months: int = 13
    min_valid_fraction: float = 0.5
    climatology_window: Optional[List[str]] = None
    urban_radius_km: float = 5.0
    density_threshold: float = 1500.0
    population_factor: int = 10
    bin_width: float = 0.5
    dedup: str = 'max'
    band: str = 'central95'
    fraction: float = 0.3
    abs_level_degC: float = 1.0
    deseasonalize: bool = True
    center_cell_only: bool = False
    workers: int = 1
    seed: int = 42
    scenario: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def output_dir(self, stage: str) -> Path:
        return Path(self.out_dir) / stage

    def require(self, *names: str) -> None:
        """Fail with a missing-input error unless every named path is set and exists"""
        for name in names:
            value = getattr(self, name)
            if not value:
                raise MissingInputError(f"No {name} configured", field=name)
            if not Path(value).is_file():
                raise MissingInputError(f"{name} not found: {value}", field=name)


def _read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Config file not found: {path}", field='config')
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON: {e.msg}", path, e.lineno, e.colno)
    if not isinstance(document, dict):
        raise ValidationError("Config file must hold a JSON object", field='config')
    return document


def load_run_config(path=None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge the configuration layers and validate the result"""
    document = _read_config_file(path) if path else {}
    env_out = os.getenv(OUT_ENV)
    if env_out:
        document['out_dir'] = env_out
    for key, value in (overrides or {}).items():
        if value is not None:
            document[key] = value

    data = load_with(RunConfigSchema(), document)
    config = RunConfig(**data)
    logger.info(f"Configuration loaded (file={path or 'none'}, out_dir={config.out_dir})")
    return config
