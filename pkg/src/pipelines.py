import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config
from .dsp import (
    FilterKind,
    FilterSpec,
    analytic_amplitude,
    apply_filter,
    moving_average,
    rectify,
    resample,
    spectral_peaks,
)
from .exceptions import ConfigError
from .models import ExtractionUnit, Recording, SampleSeries, SknaKind, SknaSeries
from .validator import Validator
from .vfcdm import (
    TimeFrequencySpectrum,
    VfcdmConfig,
    components_for_band,
    decompose,
    reconstruct,
)


logger = logging.getLogger(__name__)

# target rate -> (iSKNA band, TVSKNA band)
BAND_TABLE: Dict[int, Tuple[Tuple[float, float], Tuple[float, float]]] = {
    4000: ((500.0, 1000.0), (480.0, 1120.0)),
    1000: ((250.0, 500.0), (240.0, 480.0)),
    500: ((150.0, 250.0), (160.0, 240.0)),
}


@dataclass(frozen=True)
class PipelineConfig:
    target_rate_hz: int
    iskna_band_hz: Tuple[float, float]
    tvskna_band_hz: Tuple[float, float]
    vfcdm: VfcdmConfig
    tvskna_highpass_hz: float = 150.0
    notch_hz: Tuple[Tuple[float, float], ...] = ()
    smoothing_window_s: float = 0.1
    filter_order: int = 4
    apply_notch_iskna: bool = False
    tvskna_components: Tuple[int, ...] = field(default=(), init=False)

    def __post_init__(self) -> None:
        if abs(self.vfcdm.rate - self.target_rate_hz) > 1e-9:
            raise ConfigError(
                f"VFCDM rate {self.vfcdm.rate:g} does not match target {self.target_rate_hz}"
            )
        nyquist = self.target_rate_hz / 2.0
        for freq, q in self.notch_hz:
            if not 0 < freq < nyquist or not q > 0:
                raise ConfigError(f"Invalid notch ({freq:g} Hz, Q={q:g}) at {self.target_rate_hz} Hz")
        ids = components_for_band(self.vfcdm, self.tvskna_band_hz)
        object.__setattr__(self, 'tvskna_components', tuple(sorted(ids)))

    def with_overrides(self, **changes: object) -> 'PipelineConfig':
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        return {
            'target_rate_hz': self.target_rate_hz,
            'iskna_band_hz': list(self.iskna_band_hz),
            'tvskna_band_hz': list(self.tvskna_band_hz),
            'tvskna_highpass_hz': self.tvskna_highpass_hz,
            'notch_hz': [list(n) for n in self.notch_hz],
            'smoothing_window_s': self.smoothing_window_s,
            'filter_order': self.filter_order,
            'apply_notch_iskna': self.apply_notch_iskna,
            'vfcdm': {
                'half_bandwidth_hz': self.vfcdm.half_bandwidth_hz,
                'n_components': self.vfcdm.n_components,
                'first_pass_lpf_hz': self.vfcdm.first_pass_lpf_hz,
                'second_pass_lpf_hz': self.vfcdm.second_pass_lpf_hz,
                'lpf_order': self.vfcdm.lpf_order,
                'if_smoothing_s': self.vfcdm.if_smoothing_s,
                'components': list(self.tvskna_components),
            },
        }


def default_config(rate: float, config: Optional[Config] = None) -> PipelineConfig:
    config = config or Config()
    target = Validator.validate_rate(rate, config.supported_rates)
    if target not in BAND_TABLE:
        raise ConfigError(f"No band definition for {target} Hz")
    iskna_band, tvskna_band = BAND_TABLE[target]
    notches = tuple(
        (float(f), config.notch_q) for f in config.notch_hz if f < target / 2.0
    )
    return PipelineConfig(
        target_rate_hz=target,
        iskna_band_hz=iskna_band,
        tvskna_band_hz=tvskna_band,
        vfcdm=VfcdmConfig.for_rate(target, config),
        tvskna_highpass_hz=config.tvskna_highpass_hz,
        notch_hz=notches,
        smoothing_window_s=config.smoothing_window_s,
        filter_order=config.filter_order,
        apply_notch_iskna=config.apply_notch_iskna,
    )


def _prepare(channel: SampleSeries, cfg: PipelineConfig) -> SampleSeries:
    if channel.rate < cfg.target_rate_hz:
        raise ConfigError(
            f"Channel rate {channel.rate:g} Hz is below target {cfg.target_rate_hz} Hz"
        )
    Validator.validate_series(channel)
    return resample(channel, cfg.target_rate_hz)


def _notch(x: SampleSeries, notches: Sequence[Tuple[float, float]]) -> SampleSeries:
    for freq, q in notches:
        x = apply_filter(FilterSpec(FilterKind.NOTCH, (freq,), notch_q=q), x)
    return x


def _smooth(x: SampleSeries, window_s: float) -> SampleSeries:
    smoothed = moving_average(x, window_s)
    # Running sums can leave -1e-18 style residue
    return smoothed.with_samples(np.maximum(smoothed.samples, 0.0))


def compute_iskna(channel: SampleSeries, cfg: PipelineConfig) -> SknaSeries:
    x = _prepare(channel, cfg)
    if cfg.apply_notch_iskna:
        low, high = cfg.iskna_band_hz
        x = _notch(x, [n for n in cfg.notch_hz if low <= n[0] <= high])
    x = apply_filter(FilterSpec.band(cfg.iskna_band_hz, x.rate, cfg.filter_order), x)
    x = _smooth(rectify(x), cfg.smoothing_window_s)
    return SknaSeries(kind=SknaKind.ISKNA, series=x, config=cfg)


def tvskna_spectrum(channel: SampleSeries, cfg: PipelineConfig) -> TimeFrequencySpectrum:
    """Decomposition of the preprocessed channel over the TVSKNA components."""
    x = _prepare(channel, cfg)
    x = apply_filter(
        FilterSpec(FilterKind.HIGHPASS, (cfg.tvskna_highpass_hz,), cfg.filter_order), x
    )
    x = _notch(x, cfg.notch_hz)
    return decompose(x, cfg.vfcdm, component_ids=cfg.tvskna_components)


def notch_candidates(
    channel: SampleSeries,
    cfg: PipelineConfig,
    top_n: int = 5
) -> List[Tuple[float, float]]:
    return spectral_peaks(_prepare(channel, cfg), top_n)


def compute_tvskna(channel: SampleSeries, cfg: PipelineConfig) -> SknaSeries:
    tfs = tvskna_spectrum(channel, cfg)
    band = reconstruct(tfs, cfg.tvskna_components)
    envelope = analytic_amplitude(band)
    x = _smooth(envelope, cfg.smoothing_window_s)
    return SknaSeries(kind=SknaKind.TVSKNA, series=x, config=cfg)


class SknaPipeline(ABC):

    kind: SknaKind

    @abstractmethod
    def compute(self, channel: SampleSeries, cfg: PipelineConfig) -> SknaSeries:
        pass


class IntegratedSknaPipeline(SknaPipeline):
    kind = SknaKind.ISKNA

    def compute(self, channel: SampleSeries, cfg: PipelineConfig) -> SknaSeries:
        return compute_iskna(channel, cfg)


class TimeVaryingSknaPipeline(SknaPipeline):
    kind = SknaKind.TVSKNA

    def compute(self, channel: SampleSeries, cfg: PipelineConfig) -> SknaSeries:
        return compute_tvskna(channel, cfg)


class SknaEngine:
    def __init__(
        self,
        pipelines: Optional[Dict[SknaKind, SknaPipeline]] = None,
        config: Optional[Config] = None
    ):
        self.config = config or Config()
        self.pipelines = pipelines or {
            SknaKind.ISKNA: IntegratedSknaPipeline(),
            SknaKind.TVSKNA: TimeVaryingSknaPipeline(),
        }

    def plan(
        self,
        recording: Recording,
        configs: Sequence[PipelineConfig],
        kinds: Sequence[SknaKind],
        channels: Optional[Sequence[int]] = None
    ) -> List[ExtractionUnit]:
        channels = channels or list(range(1, recording.n_channels + 1))
        return [
            ExtractionUnit(channel=ch, rate_hz=cfg.target_rate_hz, kind=kind)
            for ch in channels
            for cfg in configs
            for kind in kinds
        ]

    def extract(
        self,
        recording: Recording,
        configs: Sequence[PipelineConfig],
        kinds: Sequence[SknaKind],
        channels: Optional[Sequence[int]] = None
    ) -> List[SknaSeries]:
        by_rate = {cfg.target_rate_hz: cfg for cfg in configs}
        units = self.plan(recording, configs, kinds, channels)
        logger.info(
            f"Extracting {len(units)} SKNA series for participant "
            f"{recording.participant_id} with {self.config.workers} worker(s)"
        )

        def run(unit: ExtractionUnit) -> ExtractionUnit:
            cfg = by_rate[unit.rate_hz]
            series = self.pipelines[unit.kind].compute(recording.channel(unit.channel), cfg)
            unit.result = SknaSeries(
                kind=series.kind,
                series=series.series,
                config=cfg,
                channel=unit.channel,
                participant_id=recording.participant_id,
            )
            logger.debug(
                f"  ch{unit.channel} {unit.rate_hz} Hz {unit.kind.value}: "
                f"{len(unit.result)} samples"
            )
            return unit

        if self.config.workers > 1 and len(units) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                done = list(pool.map(run, units))
        else:
            done = [run(unit) for unit in units]
        return [unit.result for unit in done if unit.result is not None]
