import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from .config import Config
from .exceptions import ConfigError, DataError
from .models import SampleSeries


logger = logging.getLogger(__name__)

MIN_ANALYTIC_LENGTH = 16


class FilterKind(str, Enum):
    BANDPASS = 'bandpass'
    HIGHPASS = 'highpass'
    LOWPASS = 'lowpass'
    NOTCH = 'notch'


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    edges_hz: Tuple[float, ...]
    order: int = 4
    notch_q: float = 30.0

    def __post_init__(self) -> None:
        expected = 2 if self.kind == FilterKind.BANDPASS else 1
        if len(self.edges_hz) != expected:
            raise ConfigError(
                f"{self.kind.value} filter needs {expected} edge(s), got {self.edges_hz}"
            )
        if self.order < 1:
            raise ConfigError(f"Filter order must be positive, got {self.order}")
        if self.kind == FilterKind.BANDPASS and not self.edges_hz[0] < self.edges_hz[1]:
            raise ConfigError(f"Bandpass needs low < high, got {self.edges_hz}")
        if self.kind == FilterKind.NOTCH and not self.notch_q > 0:
            raise ConfigError(f"Notch Q must be positive, got {self.notch_q}")

    @classmethod
    def band(cls, band_hz: Tuple[float, float], rate: float, order: int = 4) -> 'FilterSpec':
        """Bandpass, or a highpass when the upper edge reaches Nyquist."""
        low, high = band_hz
        if high >= rate / 2.0:
            return cls(FilterKind.HIGHPASS, (low,), order)
        return cls(FilterKind.BANDPASS, (low, high), order)


def design_filter(spec: FilterSpec, rate: float) -> np.ndarray:
    nyquist = rate / 2.0
    for edge in spec.edges_hz:
        if not 0 < edge < nyquist:
            raise ConfigError(
                f"{spec.kind.value} edge {edge:g} Hz outside (0, {nyquist:g}) at {rate:g} Hz"
            )

    if spec.kind == FilterKind.NOTCH:
        b, a = signal.iirnotch(spec.edges_hz[0], spec.notch_q, fs=rate)
        return signal.tf2sos(b, a)

    edges = spec.edges_hz if spec.kind == FilterKind.BANDPASS else spec.edges_hz[0]
    return signal.butter(spec.order, edges, btype=spec.kind.value, fs=rate, output='sos')


def frequency_response(sos: np.ndarray, freqs_hz: np.ndarray, rate: float) -> np.ndarray:
    """Complex single-pass response at the given frequencies."""
    _, response = signal.sosfreqz(sos, worN=np.asarray(freqs_hz, dtype=float), fs=rate)
    return response


def padding_length(sos: np.ndarray) -> int:
    # Same edge padding scipy.signal.sosfiltfilt uses by default
    n_sections = sos.shape[0]
    trailing_zeros = min(int((sos[:, 2] == 0).sum()), int((sos[:, 5] == 0).sum()))
    return 3 * (2 * n_sections + 1 - trailing_zeros)


def zero_phase(sos: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Forward-backward filtering of a real or complex array."""
    padlen = padding_length(sos)
    if values.shape[-1] <= padlen:
        raise DataError(
            f"Signal of {values.shape[-1]} samples too short for zero-phase "
            f"filtering (needs more than {padlen})"
        )
    if np.iscomplexobj(values):
        real = signal.sosfiltfilt(sos, values.real, padlen=padlen)
        imag = signal.sosfiltfilt(sos, values.imag, padlen=padlen)
        return real + 1j * imag
    return signal.sosfiltfilt(sos, values, padlen=padlen)


def filtfilt(sos: np.ndarray, x: SampleSeries) -> SampleSeries:
    return x.with_samples(zero_phase(sos, x.samples))


def apply_filter(spec: FilterSpec, x: SampleSeries) -> SampleSeries:
    return filtfilt(design_filter(spec, x.rate), x)


def anti_alias_taps(up: int, down: int, config: Optional[Config] = None) -> np.ndarray:
    """Kaiser lowpass for resample_poly, in units of the upsampled Nyquist."""
    config = config or Config()
    stop = 1.0 / max(up, down)
    passband = config.resample_passband_fraction * stop
    numtaps, beta = signal.kaiserord(config.resample_stopband_db, stop - passband)
    numtaps |= 1
    return signal.firwin(numtaps, 0.5 * (passband + stop), window=('kaiser', beta))


def resample(
    x: SampleSeries,
    target_rate: float,
    config: Optional[Config] = None
) -> SampleSeries:
    config = config or Config()
    if not target_rate > 0:
        raise ConfigError(f"Target rate must be positive, got {target_rate}")

    ratio = target_rate / x.rate
    fraction = Fraction(ratio).limit_denominator(config.resample_max_denominator)
    if fraction.numerator == 0 or abs(float(fraction) - ratio) > 1e-12 * ratio:
        raise ConfigError(
            f"Rate ratio {target_rate:g}/{x.rate:g} is not a rational with "
            f"denominator <= {config.resample_max_denominator}"
        )

    n_out = int(round(len(x) * ratio))
    if fraction == 1:
        return SampleSeries(samples=x.samples, rate=float(target_rate))

    up, down = fraction.numerator, fraction.denominator
    logger.debug(f"Resampling {x.rate:g} -> {target_rate:g} Hz (up={up}, down={down})")
    y = signal.resample_poly(
        x.samples, up, down, window=anti_alias_taps(up, down, config)
    )
    return SampleSeries(samples=y[:n_out], rate=float(target_rate))


def rectify(x: SampleSeries) -> SampleSeries:
    return x.with_samples(np.abs(x.samples))


def moving_average(
    x: SampleSeries,
    window_s: float
) -> SampleSeries:
    """Centered moving average whose window shrinks at the signal edges."""
    width = window_s * x.rate
    if width < 1:
        raise ConfigError(
            f"Window {window_s:g} s is shorter than one sample at {x.rate:g} Hz"
        )
    size = int(round(width))
    if size == 1 or len(x) == 0:
        return x.with_samples(x.samples)

    sums = uniform_filter1d(x.samples, size=size, mode='constant', cval=0.0)
    coverage = uniform_filter1d(np.ones(len(x)), size=size, mode='constant', cval=0.0)
    return x.with_samples(sums / coverage)


def kernel_length(window_s: float, rate: float) -> int:
    return int(round(window_s * rate))


def analytic_amplitude(
    x: SampleSeries,
    edge_fraction: Optional[float] = None
) -> SampleSeries:
    if len(x) < MIN_ANALYTIC_LENGTH:
        raise DataError(
            f"Analytic signal needs at least {MIN_ANALYTIC_LENGTH} samples, got {len(x)}"
        )
    if edge_fraction is None:
        edge_fraction = Config().edge_fraction
    envelope = np.abs(signal.hilbert(x.samples))
    guard = int(round(edge_fraction * len(x)))
    return x.with_samples(envelope, edge_guard=max(x.edge_guard, guard))


def interior_slice(n: int, fraction: float) -> slice:
    guard = int(round(fraction * n))
    return slice(guard, n - guard)


def band_power(x: SampleSeries, band_hz: Tuple[float, float]) -> float:
    """Mean power of ``x`` inside ``band_hz`` from the one-sided FFT spectrum."""
    n = len(x)
    spectrum = np.fft.rfft(x.samples)
    freqs = np.fft.rfftfreq(n, d=1.0 / x.rate)
    power = np.abs(spectrum) ** 2 / n ** 2
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0
    mask = (freqs >= band_hz[0]) & (freqs <= band_hz[1])
    return float(power[mask].sum())


def spectral_peaks(
    x: SampleSeries,
    top_n: int = 5,
    min_hz: float = 1.0,
    prominence_db: float = 10.0
) -> List[Tuple[float, float]]:
    """Dominant narrowband peaks (frequency, PSD) as notch candidates."""
    nperseg = int(min(len(x), max(256, 2 ** int(np.ceil(np.log2(x.rate))))))
    freqs, psd = signal.welch(x.samples, fs=x.rate, nperseg=nperseg)
    floor = np.maximum(psd, np.finfo(float).tiny)
    log_psd = 10.0 * np.log10(floor)
    peaks, _ = signal.find_peaks(log_psd, prominence=prominence_db)
    keep = [i for i in peaks if freqs[i] >= min_hz]
    keep.sort(key=lambda i: psd[i], reverse=True)
    return [(float(freqs[i]), float(psd[i])) for i in keep[:top_n]]
