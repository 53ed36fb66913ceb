import json
import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

from .config import Config
from .exceptions import ConfigError
from .models import Recording, SegmentAnnotation, Task
from .recording_io import RecordingFormat, RecordingIO, atomic_path, sidecar_path


logger = logging.getLogger(__name__)

DEFAULT_PLAN: Tuple[Tuple[str, int], ...] = (('VM', 3), ('ST', 1), ('TG', 6))
CHANNEL_NAMES = ('LeadI', 'LeadIII')

# VAS ranges of the two grill intensities and of non-significant pain
_MODERATE_VAS = (4.0, 6.0)
_STRONG_VAS = (7.0, 10.0)
_MILD_VAS = (0.5, 3.5)


@dataclass(frozen=True)
class Jitter:
    """Per-participant spread of heart rate, overall gain and noise level."""

    heart_rate_bpm: float = 5.0
    amplitude_sigma: float = 0.4
    noise_fraction: float = 0.1

    @classmethod
    def none(cls) -> 'Jitter':
        return cls(0.0, 0.0, 0.0)

    def scaled(self, factor: float) -> 'Jitter':
        return Jitter(
            self.heart_rate_bpm * factor,
            self.amplitude_sigma * factor,
            self.noise_fraction * factor,
        )


@dataclass(frozen=True)
class SynthSpec:
    n_participants: int = 16
    native_rate_hz: float = 10000.0
    heart_rate_bpm: float = 70.0
    qrs_amplitude_mv: float = 1.0
    qrs_width_s: float = 0.008
    burst_band_hz: Tuple[float, float] = (150.0, 500.0)
    burst_amplitude_mv: float = 0.01
    burst_duration_s: float = 1.0
    bursts_per_segment: int = 5
    noise_sigma_mv: float = 0.002
    mains_hz: float = 60.0
    mains_amplitude_mv: float = 0.0
    channel_gains: Tuple[float, ...] = (1.0, 0.8)
    plan_counts: Tuple[Tuple[str, int], ...] = DEFAULT_PLAN
    task_durations: Optional[Dict[str, float]] = None
    plan: Tuple[SegmentAnnotation, ...] = ()
    lead_in_s: float = 2.0
    recovery_s: float = 5.0
    baseline_gap_s: Optional[float] = None
    csp_minus_share: float = 0.25
    jitter: Jitter = field(default_factory=Jitter)
    seed: int = 0

    def __post_init__(self) -> None:
        low, high = self.burst_band_hz
        nyquist = self.native_rate_hz / 2.0
        if not 0 < low < high < nyquist:
            raise ConfigError(
                f"Burst band {low:g}-{high:g} Hz must lie inside (0, {nyquist:g}) Hz"
            )
        if self.n_participants < 1:
            raise ConfigError(f"Need at least one participant, got {self.n_participants}")
        if not 1 <= len(self.channel_gains) <= len(CHANNEL_NAMES):
            raise ConfigError(f"Between 1 and {len(CHANNEL_NAMES)} channels supported")
        if self.burst_amplitude_mv < 0 or self.noise_sigma_mv < 0:
            raise ConfigError("Burst amplitude and noise sigma must be >= 0")
        if self.bursts_per_segment < 0 or not self.burst_duration_s > 0:
            raise ConfigError("Burst count must be >= 0 and burst duration positive")
        if not 0 <= self.csp_minus_share <= 1:
            raise ConfigError(f"csp_minus_share must be within [0, 1], got {self.csp_minus_share}")
        for label, count in self.plan_counts:
            if label not in ('VM', 'ST', 'TG') or count < 0:
                raise ConfigError(f"Invalid plan entry {label}={count}")

    @property
    def gap_s(self) -> float:
        return Config().baseline_gap_s if self.baseline_gap_s is None else self.baseline_gap_s

    def duration_for(self, label: str) -> float:
        durations = dict(Config().task_durations)
        durations.update(self.task_durations or {})
        return float(durations[label])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_participants': self.n_participants,
            'native_rate_hz': self.native_rate_hz,
            'heart_rate_bpm': self.heart_rate_bpm,
            'qrs_amplitude_mv': self.qrs_amplitude_mv,
            'qrs_width_s': self.qrs_width_s,
            'burst_band_hz': list(self.burst_band_hz),
            'burst_amplitude_mv': self.burst_amplitude_mv,
            'burst_duration_s': self.burst_duration_s,
            'bursts_per_segment': self.bursts_per_segment,
            'noise_sigma_mv': self.noise_sigma_mv,
            'mains_hz': self.mains_hz,
            'mains_amplitude_mv': self.mains_amplitude_mv,
            'channel_gains': list(self.channel_gains),
            'plan_counts': [list(p) for p in self.plan_counts],
            'task_durations': dict(sorted((self.task_durations or {}).items())),
            'plan': [_annotation_dict(a) for a in self.plan],
            'lead_in_s': self.lead_in_s,
            'recovery_s': self.recovery_s,
            'baseline_gap_s': self.gap_s,
            'csp_minus_share': self.csp_minus_share,
            'jitter': {
                'heart_rate_bpm': self.jitter.heart_rate_bpm,
                'amplitude_sigma': self.jitter.amplitude_sigma,
                'noise_fraction': self.jitter.noise_fraction,
            },
            'seed': self.seed,
        }


class SyntheticParticipant(NamedTuple):
    recording: Recording
    annotations: List[SegmentAnnotation]
    truth: Dict[str, Any]


def _annotation_dict(ann: SegmentAnnotation) -> Dict[str, Any]:
    return {
        'label': ann.label.value,
        'start_s': ann.start_s,
        'duration_s': ann.duration_s,
        'vas': ann.vas,
    }


def layout_plan(spec: SynthSpec) -> List[Tuple[Task, float, float]]:
    """
    Task segments as (task, start, duration), one after another.

    Each task is preceded by a free window of its own length plus the
    baseline gap, so the derived pre-stimulus baseline never touches a burst.
    """
    segments = []
    cursor = spec.lead_in_s
    for label, count in spec.plan_counts:
        duration = spec.duration_for(label)
        for _ in range(count):
            start = cursor + duration + spec.gap_s
            segments.append((Task(label), start, duration))
            cursor = start + duration + spec.recovery_s
    return segments


def _check_overlaps(segments: Sequence[Tuple[Task, float, float]]) -> None:
    ordered = sorted(segments, key=lambda s: s[1])
    for (task_a, start_a, dur_a), (task_b, start_b, _) in zip(ordered, ordered[1:]):
        if start_b < start_a + dur_a - 1e-9:
            raise ConfigError(
                f"Plan segments overlap: {task_a.value} at {start_a:g} s and "
                f"{task_b.value} at {start_b:g} s"
            )


def band_limited_noise(
    n: int,
    rate: float,
    band_hz: Tuple[float, float],
    rng: np.random.Generator
) -> np.ndarray:
    """Unit-RMS Gaussian noise with all spectral content inside ``band_hz``."""
    if n == 0:
        return np.zeros(0)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spectrum[(freqs < band_hz[0]) | (freqs > band_hz[1])] = 0.0
    noise = np.fft.irfft(spectrum, n=n)
    rms = float(np.sqrt(np.mean(noise ** 2)))
    return noise / rms if rms > 0 else noise


def qrs_train(
    n: int,
    rate: float,
    heart_rate_bpm: float,
    amplitude_mv: float,
    width_s: float,
    first_beat_s: float = 0.5
) -> np.ndarray:
    """Gaussian-derivative pulses at a fixed heart rate, peak amplitude ``amplitude_mv``."""
    if not heart_rate_bpm > 0:
        raise ConfigError(f"Heart rate must be positive, got {heart_rate_bpm}")
    impulses = np.zeros(n)
    beats = np.arange(first_beat_s, n / rate, 60.0 / heart_rate_bpm)
    impulses[np.round(beats * rate).astype(int).clip(0, n - 1)] = 1.0

    half = int(np.ceil(5 * width_s * rate))
    u = np.arange(-half, half + 1) / (width_s * rate)
    # -u * exp(-u^2/2) peaks at exp(-1/2)
    kernel = -u * np.exp(0.5 - u ** 2 / 2.0) * amplitude_mv
    return fftconvolve(impulses, kernel, mode='same')


def _draw_vas(rng: np.random.Generator, tg_index: int, csp_minus_share: float) -> float:
    if rng.random() < csp_minus_share:
        low, high = _MILD_VAS
    else:
        low, high = _MODERATE_VAS if tg_index % 2 == 0 else _STRONG_VAS
    return float(np.round(rng.uniform(low, high) * 2.0) / 2.0)


def _participant_seed(spec: SynthSpec, index: int) -> int:
    child = np.random.SeedSequence(spec.seed).spawn(index + 1)[index]
    return int(child.generate_state(1)[0])


def simulate_participant(
    spec: SynthSpec,
    index: int = 0,
    jitter: Optional[Jitter] = None
) -> SyntheticParticipant:
    jitter = spec.jitter if jitter is None else jitter
    seed = _participant_seed(spec, index)
    rng = np.random.default_rng(seed)
    rate = spec.native_rate_hz
    participant_id = f"P{index + 1:02d}"

    if spec.plan:
        tasks = [(a.label, a.start_s, a.duration_s) for a in spec.plan]
        _check_overlaps(tasks)
        annotations = list(spec.plan)
    else:
        tasks = layout_plan(spec)
        _check_overlaps(tasks)
        annotations = []
        tg_count = 0
        for task, start, duration in tasks:
            vas = None
            if task == Task.TG:
                vas = _draw_vas(rng, tg_count, spec.csp_minus_share)
                tg_count += 1
            annotations.append(SegmentAnnotation(task, start, duration, vas))
    end = max((a.end_s for a in annotations), default=0.0) + spec.recovery_s
    n = int(round(end * rate))

    heart_rate = spec.heart_rate_bpm + jitter.heart_rate_bpm * rng.standard_normal()
    gain = float(np.exp(jitter.amplitude_sigma * rng.standard_normal()))
    noise_sigma = spec.noise_sigma_mv * max(0.1, 1.0 + jitter.noise_fraction * rng.standard_normal())

    envelope = np.zeros(n)
    burst_len = int(round(spec.burst_duration_s * rate))
    window = np.hanning(burst_len)
    bursts = []
    for seg_index, ann in enumerate(annotations):
        if ann.label == Task.BASELINE or spec.bursts_per_segment == 0:
            continue
        slot = ann.duration_s / spec.bursts_per_segment
        if slot < spec.burst_duration_s:
            raise ConfigError(
                f"{spec.bursts_per_segment} bursts of {spec.burst_duration_s:g} s "
                f"do not fit a {ann.duration_s:g} s {ann.label.value} segment"
            )
        for j in range(spec.bursts_per_segment):
            onset = ann.start_s + j * slot + rng.uniform(0.0, slot - spec.burst_duration_s)
            first = int(round(onset * rate))
            stop = min(first + burst_len, n)
            envelope[first:stop] += window[:stop - first]
            bursts.append({
                'segment': seg_index,
                'label': ann.label.value,
                'onset_s': round(onset, 6),
                'duration_s': spec.burst_duration_s,
            })

    carrier = band_limited_noise(n, rate, spec.burst_band_hz, rng)
    skna = gain * spec.burst_amplitude_mv * carrier * envelope
    ecg = qrs_train(n, rate, heart_rate, spec.qrs_amplitude_mv, spec.qrs_width_s)
    mains = spec.mains_amplitude_mv * np.sin(2.0 * np.pi * spec.mains_hz * np.arange(n) / rate)

    channels = []
    for channel_gain in spec.channel_gains:
        noise = gain * noise_sigma * rng.standard_normal(n)
        channels.append(channel_gain * (ecg + skna) + noise + mains)

    recording = Recording(
        channel_names=CHANNEL_NAMES[:len(channels)],
        samples=np.vstack(channels),
        sample_rate=rate,
        participant_id=participant_id,
    )
    truth = {
        'participant_id': participant_id,
        'seed': seed,
        'heart_rate_bpm': heart_rate,
        'gain': gain,
        'noise_sigma_mv': noise_sigma,
        'segments': [_annotation_dict(a) for a in annotations],
        'bursts': bursts,
    }
    logger.debug(
        f"Simulated {participant_id}: {recording.duration_s:.1f} s, HR {heart_rate:.1f} bpm, "
        f"gain {gain:.3f}, {len(bursts)} bursts"
    )
    return SyntheticParticipant(recording, annotations, truth)


def generate(spec: SynthSpec) -> Tuple[Recording, List[SegmentAnnotation]]:
    participant = simulate_participant(spec, 0)
    return participant.recording, participant.annotations


def iter_cohort(spec: SynthSpec, jitter: Optional[Jitter] = None) -> Iterator[SyntheticParticipant]:
    for index in range(spec.n_participants):
        yield simulate_participant(spec, index, jitter)


def generate_cohort(
    spec: SynthSpec,
    jitter: Optional[Jitter] = None
) -> List[Tuple[Recording, List[SegmentAnnotation]]]:
    return [(p.recording, p.annotations) for p in iter_cohort(spec, jitter)]


def annotation_path(recording_path: Path) -> Path:
    return recording_path.with_name(f"{recording_path.stem}_annotations.csv")


def write_cohort(
    spec: SynthSpec,
    out_dir: Path,
    fmt: RecordingFormat = RecordingFormat.CSV,
    io: Optional[RecordingIO] = None,
    written: Optional[List[Path]] = None
) -> List[Path]:
    """
    Write every participant plus ``ground_truth.json``.

    Paths are appended to ``written`` as soon as each file exists, so a
    caller can clean up after a failure part way through.
    """
    io = io or RecordingIO()
    suffix = '.csv' if fmt == RecordingFormat.CSV else '.bin'
    written = [] if written is None else written
    truth = []
    for participant in iter_cohort(spec):
        rec_path = out_dir / f"{participant.recording.participant_id}{suffix}"
        io.save_recording(participant.recording, rec_path, fmt)
        written.append(rec_path)
        if fmt == RecordingFormat.RAW_BINARY:
            written.append(sidecar_path(rec_path))
        ann_path = annotation_path(rec_path)
        io.save_annotations(participant.annotations, ann_path)
        written.append(ann_path)
        truth.append(participant.truth)

    truth_path = out_dir / 'ground_truth.json'
    with atomic_path(truth_path) as tmp:
        tmp.write_text(
            json.dumps({'spec': spec.to_dict(), 'participants': truth}, indent=2, sort_keys=True)
            + '\n',
            encoding='utf-8'
        )
    written.append(truth_path)
    logger.info(f"Wrote {spec.n_participants} synthetic participants to {out_dir}")
    return written


def _table(doc: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def spec_from_dict(doc: Dict[str, Any]) -> SynthSpec:
    unknown = set(doc) - {'cohort', 'signal', 'burst', 'plan'}
    if unknown:
        raise ConfigError(f"Unknown spec section(s): {', '.join(sorted(unknown))}")
    cohort = _table(doc, 'cohort')
    sig = _table(doc, 'signal')
    burst = _table(doc, 'burst')
    plan = dict(_table(doc, 'plan'))

    try:
        jitter_value = cohort.get('jitter', 1.0)
        if isinstance(jitter_value, dict):
            jitter = Jitter(**{k: float(v) for k, v in jitter_value.items()})
        else:
            jitter = Jitter().scaled(float(jitter_value))

        segments = tuple(
            SegmentAnnotation(
                Task.parse(str(s['label'])), float(s['start_s']),
                float(s['duration_s']), None if s.get('vas') is None else float(s['vas'])
            )
            for s in plan.pop('segments', [])
        )
        durations = {str(k): float(v) for k, v in plan.pop('durations', {}).items()}
        options = {
            key: plan.pop(key) for key in ('lead_in_s', 'recovery_s', 'csp_minus_share', 'baseline_gap_s')
            if key in plan
        }
        counts = tuple((str(k), int(v)) for k, v in plan.items()) or DEFAULT_PLAN

        fields: Dict[str, Any] = {
            'n_participants': int(cohort.get('n_participants', 16)),
            'seed': int(cohort.get('seed', 0)),
            'native_rate_hz': float(cohort.get('native_rate_hz', Config().native_rate_hz)),
            'jitter': jitter,
            'plan': segments,
            'plan_counts': counts,
            'task_durations': durations or None,
        }
        for key in ('heart_rate_bpm', 'qrs_amplitude_mv', 'qrs_width_s', 'noise_sigma_mv',
                    'mains_hz', 'mains_amplitude_mv'):
            if key in sig:
                fields[key] = float(sig[key])
        if 'channel_gains' in sig:
            fields['channel_gains'] = tuple(float(g) for g in sig['channel_gains'])
        burst_keys = {
            'band_hz': 'burst_band_hz', 'amplitude_mv': 'burst_amplitude_mv',
            'duration_s': 'burst_duration_s', 'count': 'bursts_per_segment',
        }
        for key, target in burst_keys.items():
            if key in burst:
                value = burst[key]
                fields[target] = (
                    tuple(float(v) for v in value) if key == 'band_hz'
                    else int(value) if key == 'count' else float(value)
                )
        for key, value in options.items():
            fields[key] = float(value)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid synth spec: {str(e)}")
    return SynthSpec(**fields)


def load_synth_spec(path: Path) -> SynthSpec:
    if not path.exists():
        raise ConfigError(f"Spec file not found: {path}")
    try:
        with open(path, 'rb') as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {str(e)}")
    spec = spec_from_dict(doc)
    logger.info(f"Loaded synth spec from {path}: {spec.n_participants} participants, seed {spec.seed}")
    return spec
