import csv
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import Config
from .exceptions import DataError, FileOperationError, FormatError
from .models import Recording, SegmentAnnotation, SknaSeries, Task
from .validator import Validator


logger = logging.getLogger(__name__)

_LENGTH_PREFIX = np.dtype('<u8')
_SAMPLE_DTYPE = np.dtype('<f8')


class RecordingFormat(str, Enum):
    CSV = 'csv'
    RAW_BINARY = 'raw_binary'

    @classmethod
    def for_path(cls, path: Path) -> 'RecordingFormat':
        return cls.CSV if path.suffix.lower() == '.csv' else cls.RAW_BINARY


@contextmanager
def atomic_path(target: Path) -> Iterator[Path]:
    """Yield a temporary sibling path that replaces ``target`` on success."""
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{target.name}.', dir=target.parent)
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            tmp.unlink()


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + '.json')


class RecordingIO:

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()

    # Recordings

    def load_recording(
        self,
        path: Path,
        fmt: Optional[RecordingFormat] = None
    ) -> Recording:
        fmt = fmt or RecordingFormat.for_path(path)
        logger.info(f"Reading {fmt.value} recording from {path}")

        if not path.exists():
            raise FileOperationError(f"File not found: {path}")

        try:
            if fmt == RecordingFormat.CSV:
                recording = self._read_csv(path)
            else:
                recording = self._read_binary(path)
        except OSError as e:
            raise FileOperationError(f"File I/O error: {str(e)}")

        Validator.validate_recording(recording)
        logger.info(
            f"Loaded {recording.n_channels} channels x {recording.n_samples} samples "
            f"at {recording.sample_rate:g} Hz ({recording.duration_s:.2f} s)"
        )
        return recording

    def save_recording(
        self,
        recording: Recording,
        path: Path,
        fmt: Optional[RecordingFormat] = None
    ) -> None:
        fmt = fmt or RecordingFormat.for_path(path)
        if recording.n_samples == 0:
            raise FormatError("Refusing to save a zero-length recording")
        logger.info(f"Writing {fmt.value} recording to {path}")

        try:
            if fmt == RecordingFormat.CSV:
                self._write_csv(recording, path)
            else:
                self._write_binary(recording, path)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    def _read_csv(self, path: Path) -> Recording:
        with open(path, 'r', encoding='utf-8') as f:
            header = self._parse_header(f.readline(), path)
            try:
                data = np.loadtxt(f, delimiter=',', ndmin=2, dtype=np.float64)
            except ValueError as e:
                raise DataError(f"Ragged or unparsable rows in {path}: {str(e)}")

        names = header['channels']
        if data.size == 0:
            raise FormatError(f"No samples in {path}")
        if data.shape[1] != len(names):
            raise DataError(
                f"{data.shape[1]} columns but header declares {len(names)} channels"
            )
        Validator.validate_finite(data.T, 'recording')
        return Recording(
            channel_names=tuple(names),
            samples=data.T,
            sample_rate=header['rate'],
            participant_id=header.get('participant') or path.stem
        )

    @staticmethod
    def _parse_header(line: str, path: Path) -> Dict:
        fields: Dict = {}
        for part in line.strip().split(';'):
            if '=' not in part:
                continue
            key, value = part.split('=', 1)
            fields[key.strip().lower()] = value.strip()

        if 'rate' not in fields or 'channels' not in fields:
            raise FormatError(
                f"Missing header in {path}: expected 'rate=<float>;channels=<names>'"
            )
        try:
            fields['rate'] = float(fields['rate'])
        except ValueError:
            raise FormatError(f"Invalid rate in header of {path}: {fields['rate']!r}")
        if not np.isfinite(fields['rate']) or fields['rate'] <= 0:
            raise FormatError(f"Sample rate must be positive in {path}")
        fields['channels'] = [c.strip() for c in fields['channels'].split(',') if c.strip()]
        if not fields['channels']:
            raise FormatError(f"No channel names declared in {path}")
        return fields

    def _write_csv(self, recording: Recording, path: Path) -> None:
        header = (
            f"rate={recording.sample_rate!r};"
            f"channels={','.join(recording.channel_names)};"
            f"participant={recording.participant_id}"
        )
        with atomic_path(path) as tmp:
            # %.17g round-trips IEEE doubles exactly
            np.savetxt(
                tmp, recording.samples.T, fmt='%.17g', delimiter=',',
                header=header, comments=''
            )

    def _read_binary(self, path: Path) -> Recording:
        descriptor_path = sidecar_path(path)
        if not descriptor_path.exists():
            raise FormatError(f"Missing sidecar descriptor {descriptor_path}")
        try:
            descriptor = json.loads(descriptor_path.read_text(encoding='utf-8'))
            names = list(descriptor['channels'])
            rate = float(descriptor['rate'])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Invalid sidecar descriptor {descriptor_path}: {str(e)}")

        raw = path.read_bytes()
        if len(raw) < _LENGTH_PREFIX.itemsize:
            raise FormatError(f"Missing length prefix in {path}")
        n_samples = int(np.frombuffer(raw, dtype=_LENGTH_PREFIX, count=1)[0])
        expected = _LENGTH_PREFIX.itemsize + n_samples * len(names) * _SAMPLE_DTYPE.itemsize
        if len(raw) != expected:
            raise DataError(
                f"{path} holds {len(raw)} bytes, expected {expected} for "
                f"{len(names)} channels x {n_samples} samples"
            )
        data = np.frombuffer(raw, dtype=_SAMPLE_DTYPE, offset=_LENGTH_PREFIX.itemsize)
        data = data.reshape(len(names), n_samples)
        Validator.validate_finite(data, 'recording')
        return Recording(
            channel_names=tuple(names),
            samples=data,
            sample_rate=rate,
            participant_id=descriptor.get('participant_id') or path.stem
        )

    def _write_binary(self, recording: Recording, path: Path) -> None:
        descriptor = {
            'rate': recording.sample_rate,
            'channels': list(recording.channel_names),
            'participant_id': recording.participant_id,
            'n_samples': recording.n_samples,
            'layout': 'channel-major',
            'dtype': _SAMPLE_DTYPE.str,
        }
        with atomic_path(path) as tmp:
            with open(tmp, 'wb') as f:
                f.write(np.array([recording.n_samples], dtype=_LENGTH_PREFIX).tobytes())
                f.write(np.ascontiguousarray(recording.samples, dtype=_SAMPLE_DTYPE).tobytes())
        with atomic_path(sidecar_path(path)) as tmp:
            tmp.write_text(json.dumps(descriptor, indent=2, sort_keys=True), encoding='utf-8')

    # Annotations

    def load_annotations(self, path: Path) -> List[SegmentAnnotation]:
        logger.info(f"Reading annotations from {path}")

        if not path.exists():
            raise FileOperationError(f"File not found: {path}")

        try:
            with open(path, 'r', encoding='utf-8', newline='') as f:
                reader = csv.DictReader(f)
                if not reader.fieldnames:
                    raise FormatError(f"Empty annotation file: {path}")
                Validator.validate_csv_headers(
                    reader.fieldnames,
                    self.config.annotation_fields
                )

                annotations = []
                for row_num, row in enumerate(reader, start=2):
                    try:
                        annotations.append(self._annotation_from_row(row))
                    except (KeyError, ValueError) as e:
                        raise FormatError(f"Error in row {row_num}: {str(e)}")
        except csv.Error as e:
            raise FormatError(f"CSV parsing error: {str(e)}")
        except OSError as e:
            raise FileOperationError(f"File I/O error: {str(e)}")

        annotations.sort(key=lambda a: a.start_s)
        logger.info(f"Successfully read {len(annotations)} annotations")
        return annotations

    def _annotation_from_row(self, row: Dict[str, str]) -> SegmentAnnotation:
        label = Task.parse(row['label'])
        start = float(row['start_s'])
        duration_text = (row.get('duration_s') or '').strip()
        if duration_text:
            duration = float(duration_text)
        else:
            default = self.config.default_duration(label.value)
            if default is None:
                raise ValueError(f"{label.value} row needs an explicit duration")
            duration = default
        default = self.config.default_duration(label.value)
        if default is not None and duration != default:
            logger.debug(f"{label.value} at {start} s overrides duration {default} -> {duration}")
        vas_text = (row.get('vas') or '').strip()
        vas = float(vas_text) if vas_text else None
        return SegmentAnnotation(label=label, start_s=start, duration_s=duration, vas=vas)

    def save_annotations(self, annotations: Sequence[SegmentAnnotation], path: Path) -> None:
        logger.info(f"Writing {len(annotations)} annotations to {path}")
        try:
            with atomic_path(path) as tmp:
                with open(tmp, 'w', newline='', encoding='utf-8') as f:
                    writer = csv.DictWriter(f, fieldnames=self.config.annotation_fields)
                    writer.writeheader()
                    for ann in annotations:
                        writer.writerow({
                            'label': ann.label.value,
                            'start_s': repr(ann.start_s),
                            'duration_s': repr(ann.duration_s),
                            'vas': '' if ann.vas is None else repr(ann.vas),
                        })
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    # Derived series

    def write_series(self, series: SknaSeries, path: Path) -> None:
        logger.debug(f"Writing {series.kind.value} series ({len(series)} samples) to {path}")
        data = np.column_stack([series.series.times(), series.samples])
        try:
            with atomic_path(path) as tmp:
                np.savetxt(
                    tmp, data, fmt=self.config.float_format, delimiter=',',
                    header=','.join(self.config.series_fields), comments=''
                )
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    def write_table(self, frame: pd.DataFrame, path: Path) -> None:
        logger.debug(f"Writing {len(frame)} rows to {path}")
        try:
            with atomic_path(path) as tmp:
                frame.to_csv(tmp, index=False, float_format=self.config.float_format)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")
