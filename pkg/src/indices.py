import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import Config
from .exceptions import DataError, ExcludedSegment, FileOperationError, FormatError
from .manifest import config_digest
from .models import (
    Condition,
    Recording,
    SampleSeries,
    SegmentAnnotation,
    SknaKind,
    SknaSeries,
    Task,
)
from .pipelines import PipelineConfig, SknaEngine
from .recording_io import atomic_path
from .validator import Validator


logger = logging.getLogger(__name__)

TABLE_COLUMNS = [
    'participant', 'channel', 'rate', 'kind', 'task',
    'condition', 'segment_id', 'max', 'mean', 'sd',
]
EXCLUSION_COLUMNS = [
    'participant', 'channel', 'rate', 'kind', 'task',
    'condition', 'segment_id', 'reason',
]


@dataclass(frozen=True)
class IndexRecord:
    participant_id: str
    channel: int
    rate_hz: int
    kind: SknaKind
    task: Task
    condition: Condition
    segment_id: int
    max_val: float
    mean_val: float
    sd_val: float

    def __post_init__(self) -> None:
        if self.sd_val < 0:
            raise ValueError(f"Negative SD {self.sd_val}")
        if self.max_val < self.mean_val:
            raise ValueError(f"max {self.max_val} below mean {self.mean_val}")
        if self.condition in (Condition.CSP_MINUS, Condition.CSP_PLUS) and self.task != Task.TG:
            raise ValueError(f"{self.condition.value} only applies to TG, got {self.task.value}")

    @property
    def key(self) -> Tuple:
        return (
            self.participant_id, self.channel, self.rate_hz, self.kind.value,
            self.task.value, self.condition.value, self.segment_id,
        )

    def value(self, index: str) -> float:
        return {'max': self.max_val, 'mean': self.mean_val, 'sd': self.sd_val}[index]


@dataclass(frozen=True)
class Exclusion:
    participant_id: str
    channel: int
    rate_hz: int
    kind: SknaKind
    task: Task
    condition: Condition
    segment_id: int
    reason: str


@dataclass(frozen=True)
class SegmentPair:
    """A task segment and the baseline it is compared against."""

    segment_id: int
    task: SegmentAnnotation
    baseline: Optional[SegmentAnnotation]
    derived_baseline: bool = False


@dataclass
class IndexTable:
    rows: List[IndexRecord] = field(default_factory=list)
    exclusions: List[Exclusion] = field(default_factory=list)
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen = set()
        for row in self.rows:
            if row.key in seen:
                raise DataError(f"Duplicate index row {row.key}")
            seen.add(row.key)
        self.rows.sort(key=lambda r: r.key)
        self.exclusions.sort(key=lambda e: (
            e.participant_id, e.channel, e.rate_hz, e.kind.value,
            e.task.value, e.segment_id, e.condition.value,
        ))

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        records = [
            {
                'participant': r.participant_id,
                'channel': r.channel,
                'rate': r.rate_hz,
                'kind': r.kind.value,
                'task': r.task.value,
                'condition': r.condition.value,
                'segment_id': r.segment_id,
                'max': r.max_val,
                'mean': r.mean_val,
                'sd': r.sd_val,
            }
            for r in self.rows
        ]
        return pd.DataFrame(records, columns=TABLE_COLUMNS)

    def exclusions_frame(self) -> pd.DataFrame:
        records = [
            {
                'participant': e.participant_id,
                'channel': e.channel,
                'rate': e.rate_hz,
                'kind': e.kind.value,
                'task': e.task.value,
                'condition': e.condition.value,
                'segment_id': e.segment_id,
                'reason': e.reason,
            }
            for e in self.exclusions
        ]
        return pd.DataFrame(records, columns=EXCLUSION_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'IndexTable':
        Validator.validate_csv_headers(list(frame.columns), TABLE_COLUMNS)
        rows = []
        for i, rec in enumerate(frame.to_dict('records'), start=2):
            try:
                rows.append(IndexRecord(
                    participant_id=str(rec['participant']),
                    channel=int(rec['channel']),
                    rate_hz=int(rec['rate']),
                    kind=SknaKind.parse(str(rec['kind'])),
                    task=Task.parse(str(rec['task'])),
                    condition=Condition(str(rec['condition'])),
                    segment_id=int(rec['segment_id']),
                    max_val=float(rec['max']),
                    mean_val=float(rec['mean']),
                    sd_val=float(rec['sd']),
                ))
            except (KeyError, ValueError) as e:
                raise FormatError(f"Error in row {i}: {str(e)}")
        return cls(rows=rows)

    def write_csv(self, path: Path, float_format: Optional[str] = None) -> None:
        float_format = float_format or Config().float_format
        logger.info(f"Writing {len(self.rows)} index rows to {path}")
        try:
            with atomic_path(path) as tmp:
                self.to_frame().to_csv(tmp, index=False, float_format=float_format)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    def write_exclusions(self, path: Path) -> None:
        try:
            with atomic_path(path) as tmp:
                self.exclusions_frame().to_csv(tmp, index=False)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    def write_availability(self, path: Path) -> None:
        try:
            with atomic_path(path) as tmp:
                self.availability().to_csv(tmp, index=False)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    @classmethod
    def read_csv(cls, path: Path) -> 'IndexTable':
        logger.info(f"Reading index table from {path}")
        if not path.exists():
            raise FileOperationError(f"File not found: {path}")
        try:
            frame = pd.read_csv(path, dtype={'participant': str})
        except pd.errors.EmptyDataError:
            raise FormatError(f"Empty index table: {path}")
        except (OSError, pd.errors.ParserError) as e:
            raise FormatError(f"CSV parsing error: {str(e)}")
        return cls.from_frame(frame)

    def availability(self) -> pd.DataFrame:
        """Available / total participants and segments per channel and task."""
        total: Dict[Tuple[int, str], set] = {}
        dropped: Dict[Tuple[int, str], set] = {}
        for r in self.rows:
            total.setdefault((r.channel, r.task.value), set()).add((r.participant_id, r.segment_id))
        for e in self.exclusions:
            unit = (e.participant_id, e.segment_id)
            total.setdefault((e.channel, e.task.value), set()).add(unit)
            dropped.setdefault((e.channel, e.task.value), set()).add(unit)

        records = []
        for (channel, task), segments in sorted(total.items()):
            available = segments - dropped.get((channel, task), set())
            records.append({
                'channel': channel,
                'task': task,
                'participants_available': len({p for p, _ in available}),
                'participants_total': len({p for p, _ in segments}),
                'segments_available': len(available),
                'segments_total': len(segments),
            })
        return pd.DataFrame(records)


def slice_segment(series: SampleSeries, ann: SegmentAnnotation) -> SampleSeries:
    Validator.validate_segment_bounds(ann, len(series), series.rate)
    start = int(round(ann.start_s * series.rate))
    length = int(round(ann.duration_s * series.rate))
    return SampleSeries(samples=series.samples[start:start + length], rate=series.rate)


def compute_indices(segment: SampleSeries) -> Tuple[float, float, float]:
    """(max, mean, population SD) of a segment."""
    if len(segment) == 0:
        raise DataError("Cannot compute indices of an empty segment")
    values = segment.samples
    max_val = float(np.max(values))
    # Summation rounding can push the mean of a constant segment past its max
    mean_val = min(float(np.mean(values)), max_val)
    return max_val, mean_val, float(np.std(values, ddof=0))


def categorize_tg(ann: SegmentAnnotation, threshold: Optional[float] = None) -> Condition:
    if ann.label != Task.TG:
        raise DataError(f"Pain categories only apply to TG segments, got {ann.label.value}")
    if ann.vas is None:
        raise DataError("TG segment has no VAS score")
    threshold = Config().csp_threshold if threshold is None else threshold
    if ann.vas >= threshold:
        return Condition.CSP_PLUS
    if ann.vas > 0:
        return Condition.CSP_MINUS
    raise ExcludedSegment(f"vas-zero: VAS {ann.vas:g} is outside both pain categories")


def task_condition(ann: SegmentAnnotation) -> Condition:
    return categorize_tg(ann) if ann.label == Task.TG else Condition.TASK


def pair_segments(
    annotations: Sequence[SegmentAnnotation],
    baseline_gap_s: Optional[float] = None
) -> List[SegmentPair]:
    """
    Pair every task segment with a baseline.

    An explicit Baseline annotation belongs to the first task starting at or
    after its end. Tasks left without one get the equal-length window ending
    ``baseline_gap_s`` before the task onset, when that window fits.
    """
    gap = Config().baseline_gap_s if baseline_gap_s is None else baseline_gap_s
    ordered = sorted(annotations, key=lambda a: (a.start_s, a.label.value))
    tasks = [a for a in ordered if a.label != Task.BASELINE]
    explicit = [a for a in ordered if a.label == Task.BASELINE]

    assigned: Dict[int, SegmentAnnotation] = {}
    for baseline in explicit:
        for i, task in enumerate(tasks):
            if task.start_s >= baseline.end_s - 1e-9 and i not in assigned:
                assigned[i] = baseline
                break
        else:
            logger.warning(f"Baseline at {baseline.start_s:g} s precedes no task; ignored")

    pairs = []
    for i, task in enumerate(tasks, start=0):
        if i in assigned:
            pairs.append(SegmentPair(i + 1, task, assigned[i]))
            continue
        start = task.start_s - gap - task.duration_s
        derived = None
        if start >= 0:
            derived = SegmentAnnotation(Task.BASELINE, start, task.duration_s)
        pairs.append(SegmentPair(i + 1, task, derived, derived_baseline=True))
    return pairs


def index_rows_for_series(
    series: SknaSeries,
    pairs: Sequence[SegmentPair]
) -> Tuple[List[IndexRecord], List[Exclusion]]:
    rows: List[IndexRecord] = []
    excluded: List[Exclusion] = []
    rate = int(series.config.target_rate_hz)

    def exclude(pair: SegmentPair, condition: Condition, reason: str) -> None:
        excluded.append(Exclusion(
            series.participant_id, series.channel, rate, series.kind,
            pair.task.label, condition, pair.segment_id, reason,
        ))

    for pair in pairs:
        try:
            condition = task_condition(pair.task)
        except ExcludedSegment as e:
            exclude(pair, Condition.TASK, e.reason.split(':')[0])
            exclude(pair, Condition.BASELINE, e.reason.split(':')[0])
            continue

        for ann, cond in ((pair.task, condition), (pair.baseline, Condition.BASELINE)):
            if ann is None:
                exclude(pair, cond, 'no-baseline')
                continue
            try:
                segment = slice_segment(series.series, ann)
            except DataError:
                exclude(pair, cond, 'out-of-bounds')
                continue
            if not np.all(np.isfinite(segment.samples)):
                exclude(pair, cond, 'non-finite')
                continue
            max_val, mean_val, sd_val = compute_indices(segment)
            rows.append(IndexRecord(
                series.participant_id, series.channel, rate, series.kind,
                pair.task.label, cond, pair.segment_id, max_val, mean_val, sd_val,
            ))
    return rows, excluded


def build_index_table(
    recordings: Iterable[Recording],
    annotations: Sequence[Sequence[SegmentAnnotation]],
    configs: Sequence[PipelineConfig],
    kinds: Sequence[SknaKind],
    engine: Optional[SknaEngine] = None,
    config: Optional[Config] = None
) -> IndexTable:
    config = config or Config()
    engine = engine or SknaEngine(config=config)
    # Recordings may be loaded lazily, one participant at a time
    remaining = iter(recordings)

    rows: List[IndexRecord] = []
    excluded: List[Exclusion] = []
    seen = 0
    for anns, recording in zip(annotations, remaining):
        seen += 1
        pairs = pair_segments(anns, config.baseline_gap_s)
        if not pairs:
            logger.info(f"No task segments for {recording.participant_id}; skipping")
            continue
        for series in engine.extract(recording, configs, kinds):
            new_rows, new_excluded = index_rows_for_series(series, pairs)
            rows.extend(new_rows)
            excluded.extend(new_excluded)

    if seen != len(annotations) or next(remaining, None) is not None:
        raise DataError(
            f"Recording count does not match the {len(annotations)} annotation lists"
        )

    for e in excluded:
        logger.warning(
            f"Excluded {e.participant_id} ch{e.channel} {e.rate_hz} Hz {e.kind.value} "
            f"{e.task.value} #{e.segment_id} {e.condition.value}: {e.reason}"
        )

    provenance = {
        'config_digest': config_digest({
            'pipelines': [cfg.to_dict() for cfg in configs],
            'kinds': [k.value for k in kinds],
            'baseline_gap_s': config.baseline_gap_s,
        }),
        'baseline_rule': (
            f"explicit baseline before next task, else pre-stimulus window "
            f"with {config.baseline_gap_s:g} s gap (assumption)"
        ),
    }
    table = IndexTable(rows=rows, exclusions=excluded, provenance=provenance)
    logger.info(f"Built index table: {len(table.rows)} rows, {len(table.exclusions)} exclusions")
    return table
