from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

if TYPE_CHECKING:
    from .pipelines import PipelineConfig


class Task(str, Enum):
    BASELINE = 'Baseline'
    VM = 'VM'
    ST = 'ST'
    TG = 'TG'

    @classmethod
    def parse(cls, text: str) -> 'Task':
        for task in cls:
            if task.value.lower() == text.strip().lower():
                return task
        raise ValueError(f"Unknown task label: {text!r}")


class Condition(str, Enum):
    BASELINE = 'Baseline'
    TASK = 'Task'
    CSP_MINUS = 'CSPminus'
    CSP_PLUS = 'CSPplus'


class SknaKind(str, Enum):
    ISKNA = 'iSKNA'
    TVSKNA = 'TVSKNA'

    @classmethod
    def parse(cls, text: str) -> 'SknaKind':
        for kind in cls:
            if kind.value.lower() == text.strip().lower():
                return kind
        raise ValueError(f"Unknown SKNA kind: {text!r}")


def _frozen_array(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class SampleSeries:
    """A uniformly sampled real signal."""

    samples: np.ndarray
    rate: float
    # Samples flagged at each end as edge-affected (not trimmed).
    edge_guard: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'samples', _frozen_array(self.samples))
        if self.samples.ndim != 1:
            raise ValueError("SampleSeries samples must be one-dimensional")
        if not self.rate > 0:
            raise ValueError(f"Sample rate must be positive, got {self.rate}")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate

    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.rate

    def with_samples(self, samples: np.ndarray, edge_guard: Optional[int] = None) -> 'SampleSeries':
        return SampleSeries(
            samples=samples,
            rate=self.rate,
            edge_guard=self.edge_guard if edge_guard is None else edge_guard
        )


@dataclass(frozen=True, eq=False)
class Recording:
    """Immutable multichannel ECG recording (millivolts)."""

    channel_names: Tuple[str, ...]
    samples: np.ndarray
    sample_rate: float
    participant_id: str

    def __post_init__(self) -> None:
        array = np.array(self.samples, dtype=np.float64, copy=True)
        if array.ndim == 1:
            array = array[np.newaxis, :]
        array.flags.writeable = False
        object.__setattr__(self, 'samples', array)
        object.__setattr__(self, 'channel_names', tuple(self.channel_names))
        if len(self.channel_names) != array.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {array.shape[0]} channels"
            )
        if not self.sample_rate > 0:
            raise ValueError(f"Sample rate must be positive, got {self.sample_rate}")

    @property
    def n_channels(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> SampleSeries:
        """Channel by 1-based index, matching Channel 1 / Channel 2 naming."""
        if not 1 <= index <= self.n_channels:
            raise IndexError(f"Channel {index} out of range 1..{self.n_channels}")
        return SampleSeries(samples=self.samples[index - 1], rate=self.sample_rate)


@dataclass(frozen=True)
class SegmentAnnotation:
    """A labelled analysis window inside a recording."""

    label: Task
    start_s: float
    duration_s: float
    vas: Optional[float] = None

    def __post_init__(self) -> None:
        if self.start_s < 0:
            raise ValueError(f"Segment start must be >= 0, got {self.start_s}")
        if not self.duration_s > 0:
            raise ValueError(f"Segment duration must be positive, got {self.duration_s}")
        if self.label == Task.TG and self.vas is None:
            raise ValueError("TG segment requires a VAS score")
        if self.label != Task.TG and self.vas is not None:
            raise ValueError(f"VAS only allowed on TG segments, got {self.label.value}")
        if self.vas is not None and not 0 <= self.vas <= 10:
            raise ValueError(f"VAS must be within 0-10, got {self.vas}")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True, eq=False)
class SknaSeries:
    """An iSKNA or TVSKNA time series at one pipeline rate."""

    kind: SknaKind
    series: SampleSeries
    config: 'PipelineConfig'
    channel: int = 1
    participant_id: str = ''

    @property
    def samples(self) -> np.ndarray:
        return self.series.samples

    @property
    def rate(self) -> float:
        return self.series.rate

    def __len__(self) -> int:
        return len(self.series)


@dataclass
class ExtractionUnit:
    """One (channel, rate, kind) unit of pipeline work."""

    channel: int
    rate_hz: int
    kind: SknaKind
    result: Optional[SknaSeries] = field(default=None, repr=False)
