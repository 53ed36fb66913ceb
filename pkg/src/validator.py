from typing import List, Sequence

import numpy as np

from .exceptions import ConfigError, DataError, FormatError
from .models import Recording, SampleSeries, SegmentAnnotation


class Validator:

    @staticmethod
    def first_non_finite(values: np.ndarray) -> int:
        """Index of the first non-finite value along the sample axis, or -1."""
        bad = ~np.isfinite(np.asarray(values))
        if bad.ndim > 1:
            bad = bad.any(axis=0)
        hits = np.flatnonzero(bad)
        return int(hits[0]) if hits.size else -1

    @staticmethod
    def validate_finite(values: np.ndarray, what: str = 'signal') -> None:
        index = Validator.first_non_finite(values)
        if index >= 0:
            raise DataError(f"Non-finite {what} sample at index {index}", index=index)

    @staticmethod
    def validate_recording(recording: Recording) -> None:
        if recording.n_samples == 0:
            raise FormatError("Recording has zero-length channels")
        if len(set(recording.channel_names)) != recording.n_channels:
            raise FormatError(f"Duplicate channel names: {recording.channel_names}")
        Validator.validate_finite(recording.samples, 'recording')

    @staticmethod
    def validate_series(series: SampleSeries, min_length: int = 1) -> None:
        if len(series) < min_length:
            raise DataError(
                f"Signal has {len(series)} samples, need at least {min_length}"
            )
        Validator.validate_finite(series.samples)

    @staticmethod
    def validate_segment_bounds(
        annotation: SegmentAnnotation,
        n_samples: int,
        rate: float
    ) -> None:
        start = int(round(annotation.start_s * rate))
        length = int(round(annotation.duration_s * rate))
        if start < 0 or start + length > n_samples:
            raise DataError(
                f"{annotation.label.value} segment {annotation.start_s}-"
                f"{annotation.end_s} s exceeds series of {n_samples / rate:.3f} s"
            )

    @staticmethod
    def validate_rate(rate: float, supported: Sequence[int]) -> int:
        if rate not in supported:
            raise ConfigError(
                f"Unsupported rate {rate:g} Hz; expected one of "
                f"{', '.join(str(r) for r in supported)}"
            )
        return int(rate)

    @staticmethod
    def validate_csv_headers(headers: List[str], required_fields: List[str]) -> None:
        headers_set = set(h.strip() for h in headers)
        required_set = set(required_fields)

        missing = required_set - headers_set
        if missing:
            raise FormatError(
                f"Missing required CSV fields: {', '.join(sorted(missing))}"
            )
