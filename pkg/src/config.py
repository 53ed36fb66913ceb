import logging
import os
import tomllib
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from dotenv import load_dotenv

from .exceptions import ConfigError


def _float_tuple(value: Any) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise TypeError(f"expected a list of numbers, got {value!r}")
    return tuple(float(v) for v in value)


def _strict_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError(f"expected true or false, got {value!r}")
    return value


# Values of stats.IccForm
ICC_FORMS: Tuple[str, ...] = ('consistency', 'one-way')


def _icc_form(value: Any) -> str:
    if not isinstance(value, str) or value.strip().lower() not in ICC_FORMS:
        raise ValueError(f"expected one of {', '.join(ICC_FORMS)}, got {value!r}")
    return value.strip().lower()


# TOML section -> key -> converter for run-level overrides
RUN_OVERRIDES: Dict[str, Dict[str, Callable[[Any], Any]]] = {
    'pipeline': {
        'notch_hz': _float_tuple,
        'notch_q': float,
        'smoothing_window_s': float,
        'apply_notch_iskna': _strict_bool,
        'filter_order': int,
        'tvskna_highpass_hz': float,
    },
    'indices': {
        'baseline_gap_s': float,
        'csp_threshold': float,
    },
    'stats': {
        'icc_form': _icc_form,
    },
}


class Config:
    _instance: Optional['Config'] = None
    _initialized: bool = False

    def __new__(cls) -> 'Config':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self) -> None:
        if not Config._initialized:
            self._setup_defaults()
            self._apply_environment()
            Config._initialized = True

    def _setup_defaults(self) -> None:
        # Paths
        self.output_dir = Path('output')
        self.log_file = Path('skna.log')

        # CSV layout
        self.annotation_fields = ['label', 'start_s', 'duration_s', 'vas']
        self.series_fields = ['time_s', 'value']
        self.float_format = '%.10g'

        # Rates and filters
        self.supported_rates: Tuple[int, ...] = (4000, 1000, 500)
        self.native_rate_hz = 10000.0
        self.filter_order = 4
        self.notch_q = 30.0
        self.notch_hz: Tuple[float, ...] = (60.0, 120.0, 180.0)
        self.apply_notch_iskna = False
        self.tvskna_highpass_hz = 150.0
        self.smoothing_window_s = 0.1
        self.edge_fraction = 0.05

        # Resampler: Kaiser FIR, flat to 0.8 of the lower Nyquist, stopband from Nyquist
        self.resample_passband_fraction = 0.8
        self.resample_stopband_db = 65.0
        self.resample_max_denominator = 1000

        # VFCDM
        self.vfcdm_components = 12
        self.vfcdm_rate_divisor = 50.0
        self.vfcdm_lpf_order = 8
        self.vfcdm_if_smoothing_s = 0.05

        # Segments
        self.task_durations: Dict[str, float] = {'VM': 30.0, 'ST': 120.0, 'TG': 10.0}
        self.baseline_gap_s = 5.0
        self.csp_threshold = 4.0

        # Statistics
        self.lmm_lambda_bounds = (0.0, 1e4)
        self.lmm_tolerance = 1e-8
        self.lmm_max_iterations = 500
        self.icc_form = 'consistency'
        self.significance_levels = ((0.001, '**'), (0.05, '*'))

        # Execution
        self.workers = 1

        # Logging
        self.log_level = logging.INFO
        self.log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    def _apply_environment(self) -> None:
        load_dotenv()
        level = os.getenv('SKNA_LOG_LEVEL')
        if level:
            self.log_level = logging.getLevelName(level.upper())
        if os.getenv('SKNA_LOG_FILE'):
            self.log_file = Path(os.environ['SKNA_LOG_FILE'])
        if os.getenv('SKNA_OUTPUT_DIR'):
            self.output_dir = Path(os.environ['SKNA_OUTPUT_DIR'])
        workers = os.getenv('SKNA_WORKERS')
        if workers and workers.isdigit():
            self.workers = max(1, int(workers))

    def setup_logging(self, level: Optional[int] = None) -> None:
        logging.basicConfig(
            level=level if level is not None else self.log_level,
            format=self.log_format,
            handlers=[
                logging.StreamHandler(),
                logging.FileHandler(self.log_file)
            ],
            force=True
        )

    def apply_overrides(self, sections: Dict[str, Dict[str, Any]]) -> None:
        """Apply ``[pipeline]``, ``[indices]`` and ``[stats]`` run overrides."""
        for section, values in sections.items():
            known = RUN_OVERRIDES.get(section)
            if known is None:
                raise ConfigError(f"Unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"Unknown key '{key}' in [{section}]")
                try:
                    setattr(self, key, known[key](value))
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"Invalid value for {section}.{key}: {str(e)}")

    def load_toml(self, path: Path) -> None:
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, 'rb') as f:
                sections = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {str(e)}")
        self.apply_overrides(sections)

    def run_parameters(self) -> Dict[str, Dict[str, Any]]:
        """Current values of every run-level override, for provenance."""
        params: Dict[str, Dict[str, Any]] = {}
        for section, keys in RUN_OVERRIDES.items():
            params[section] = {}
            for key in keys:
                value = getattr(self, key)
                params[section][key] = list(value) if isinstance(value, tuple) else value
        return params

    def ensure_output_directory(self, path: Optional[Path] = None) -> Path:
        target = path or self.output_dir
        target.mkdir(parents=True, exist_ok=True)
        return target

    def default_duration(self, label: str) -> Optional[float]:
        return self.task_durations.get(label)

    @classmethod
    def reset(cls) -> None:
        cls._instance = None
        cls._initialized = False
