import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from .config import Config
from .dsp import FilterKind, FilterSpec, design_filter, moving_average, zero_phase
from .exceptions import ConfigError, DataError
from .models import SampleSeries


logger = logging.getLogger(__name__)

_ALIGN_TOLERANCE = 1e-9


@dataclass(frozen=True)
class VfcdmConfig:
    rate: float
    half_bandwidth_hz: float
    n_components: int = 12
    first_pass_lpf_hz: Optional[float] = None
    second_pass_lpf_hz: Optional[float] = None
    lpf_order: int = 8
    if_smoothing_s: float = 0.05

    def __post_init__(self) -> None:
        if self.n_components < 1:
            raise ConfigError(f"Need at least one component, got {self.n_components}")
        if not self.half_bandwidth_hz > 0:
            raise ConfigError(f"Fw must be positive, got {self.half_bandwidth_hz}")
        top_edge = 2 * self.n_components * self.half_bandwidth_hz
        if top_edge > self.rate / 2.0:
            raise ConfigError(
                f"Highest band edge {top_edge:g} Hz exceeds Nyquist {self.rate / 2.0:g} Hz"
            )
        if self.first_pass_lpf_hz is None:
            object.__setattr__(self, 'first_pass_lpf_hz', self.half_bandwidth_hz)
        if self.second_pass_lpf_hz is None:
            object.__setattr__(self, 'second_pass_lpf_hz', 0.5 * self.half_bandwidth_hz)
        if not 0 < self.second_pass_lpf_hz <= self.first_pass_lpf_hz:
            raise ConfigError(
                f"Second-pass lowpass {self.second_pass_lpf_hz:g} Hz must be positive and "
                f"no wider than the first-pass {self.first_pass_lpf_hz:g} Hz"
            )
        if self.second_pass_lpf_hz > self.half_bandwidth_hz:
            raise ConfigError(
                f"Second-pass lowpass {self.second_pass_lpf_hz:g} Hz exceeds Fw "
                f"{self.half_bandwidth_hz:g} Hz"
            )

    @classmethod
    def for_rate(cls, rate: float, config: Optional[Config] = None) -> 'VfcdmConfig':
        config = config or Config()
        return cls(
            rate=float(rate),
            half_bandwidth_hz=rate / config.vfcdm_rate_divisor,
            n_components=config.vfcdm_components,
            lpf_order=config.vfcdm_lpf_order,
            if_smoothing_s=config.vfcdm_if_smoothing_s,
        )

    @property
    def center_frequencies_hz(self) -> List[float]:
        fw = self.half_bandwidth_hz
        return [(2 * k - 1) * fw for k in range(1, self.n_components + 1)]

    def band(self, k: int) -> Tuple[float, float]:
        fw = self.half_bandwidth_hz
        return (2 * (k - 1) * fw, 2 * k * fw)

    @property
    def component_ids(self) -> List[int]:
        return list(range(1, self.n_components + 1))


@dataclass(frozen=True, eq=False)
class TimeFrequencySpectrum:
    rate: float
    component_ids: Tuple[int, ...]
    bands: Tuple[Tuple[float, float], ...]
    # Arrays are (len(component_ids), n_samples)
    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.amplitude.shape[1])

    def row(self, k: int) -> int:
        try:
            return self.component_ids.index(k)
        except ValueError:
            raise ConfigError(f"Component {k} not in spectrum {self.component_ids}")

    def energy(self) -> np.ndarray:
        """Per-component energy (sum of amplitude**2 / 2 over time)."""
        return 0.5 * np.sum(self.amplitude ** 2, axis=1)

    def total_energy(self) -> float:
        return float(self.energy().sum())

    def to_frame(self) -> pd.DataFrame:
        times = np.arange(self.n_samples) / self.rate
        frames = [
            pd.DataFrame({
                'time_s': times,
                'component': k,
                'amplitude': self.amplitude[i],
                'frequency': self.frequency[i],
            })
            for i, k in enumerate(self.component_ids)
        ]
        return pd.concat(frames, ignore_index=True)


def table_grid(cfg: VfcdmConfig) -> List[Tuple[int, float, float, float]]:
    """(component, center, low edge, high edge) rows of the component grid."""
    return [
        (k, center, *cfg.band(k))
        for k, center in zip(cfg.component_ids, cfg.center_frequencies_hz)
    ]


def components_for_band(cfg: VfcdmConfig, band_hz: Tuple[float, float]) -> Set[int]:
    low, high = band_hz
    width = 2 * cfg.half_bandwidth_hz
    first, last = low / width, high / width
    aligned = (
        abs(first - round(first)) < _ALIGN_TOLERANCE
        and abs(last - round(last)) < _ALIGN_TOLERANCE
    )
    if not aligned or not 0 <= round(first) < round(last) <= cfg.n_components:
        raise ConfigError(
            f"Band {low:g}-{high:g} Hz does not tile onto {width:g} Hz components "
            f"at {cfg.rate:g} Hz"
        )
    return set(range(int(round(first)) + 1, int(round(last)) + 1))


def _instantaneous_frequency(phase: np.ndarray, rate: float) -> np.ndarray:
    return np.gradient(phase) * rate / (2.0 * np.pi)


def _demodulate_component(
    x: np.ndarray,
    k: int,
    cfg: VfcdmConfig,
    lpf1: np.ndarray,
    lpf2: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rate = cfg.rate
    fw = cfg.half_bandwidth_hz
    center = (2 * k - 1) * fw
    fixed_phase = 2.0 * np.pi * center * np.arange(x.size) / rate

    # Pass 1: fixed carrier
    baseband = zero_phase(lpf1, x * np.exp(-1j * fixed_phase))
    coarse_phase = np.unwrap(np.angle(baseband))
    tracked = center + _instantaneous_frequency(coarse_phase, rate)
    tracked = moving_average(SampleSeries(tracked, rate), cfg.if_smoothing_s).samples
    # Keeps the pass-2 window [tracked +- lpf2] inside the component's band
    margin = fw - cfg.second_pass_lpf_hz
    tracked = np.clip(tracked, center - margin, center + margin)

    # Pass 2: demodulate the input again on theta(t) = 2*pi * integral of tracked frequency
    carrier = 2.0 * np.pi * cumulative_trapezoid(tracked, dx=1.0 / rate, initial=0.0)
    refined = zero_phase(lpf2, x * np.exp(-1j * carrier))

    amplitude = 2.0 * np.abs(refined)
    phase = carrier + np.unwrap(np.angle(refined))
    frequency = _instantaneous_frequency(phase, rate)
    return amplitude, frequency, phase


def decompose(
    x: SampleSeries,
    cfg: VfcdmConfig,
    component_ids: Optional[Iterable[int]] = None,
    workers: Optional[int] = None
) -> TimeFrequencySpectrum:
    if abs(x.rate - cfg.rate) > 1e-9 * cfg.rate:
        raise ConfigError(f"Signal rate {x.rate:g} Hz does not match VFCDM rate {cfg.rate:g} Hz")
    min_length = int(np.ceil(4 * cfg.rate / cfg.half_bandwidth_hz))
    if len(x) < min_length:
        raise DataError(f"VFCDM needs at least {min_length} samples, got {len(x)}")

    ids = tuple(sorted(set(component_ids))) if component_ids is not None else tuple(cfg.component_ids)
    unknown = [k for k in ids if k not in cfg.component_ids]
    if unknown:
        raise ConfigError(f"Unknown VFCDM component ids {unknown}")

    lpf1 = design_filter(
        FilterSpec(FilterKind.LOWPASS, (cfg.first_pass_lpf_hz,), cfg.lpf_order), cfg.rate
    )
    lpf2 = design_filter(
        FilterSpec(FilterKind.LOWPASS, (cfg.second_pass_lpf_hz,), cfg.lpf_order), cfg.rate
    )
    workers = workers or Config().workers
    logger.debug(
        f"VFCDM at {cfg.rate:g} Hz, Fw={cfg.half_bandwidth_hz:g} Hz, "
        f"components {ids}, {workers} worker(s)"
    )

    def run(k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _demodulate_component(x.samples, k, cfg, lpf1, lpf2)

    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, ids))
    else:
        results = [run(k) for k in ids]

    n = len(x)
    return TimeFrequencySpectrum(
        rate=cfg.rate,
        component_ids=ids,
        bands=tuple(cfg.band(k) for k in ids),
        amplitude=np.vstack([r[0] for r in results]) if results else np.zeros((0, n)),
        frequency=np.vstack([r[1] for r in results]) if results else np.zeros((0, n)),
        phase=np.vstack([r[2] for r in results]) if results else np.zeros((0, n)),
    )


def reconstruct(tfs: TimeFrequencySpectrum, component_ids: Sequence[int]) -> SampleSeries:
    total = np.zeros(tfs.n_samples)
    for k in sorted(set(component_ids)):
        i = tfs.row(k)
        total += tfs.amplitude[i] * np.cos(tfs.phase[i])
    return SampleSeries(samples=total, rate=tfs.rate)
