import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import Config
from .exceptions import DataError, FileOperationError, FormatError, ModelError
from .indices import IndexTable
from .models import Condition, SknaKind, Task
from .recording_io import atomic_path
from .stats import (
    IccForm,
    PairedObservations,
    auc,
    cohens_d,
    fit_lmm,
    icc_both,
    significance_stars,
)
from .validator import Validator


logger = logging.getLogger(__name__)

GRID_COLUMNS = [
    'channel', 'rate', 'kind', 'task', 'index', 'd', 'stars', 'p_value', 'auc',
    'icc', 'icc_display', 'icc_form', 'n_participants', 'n_baseline', 'n_task',
    'available',
]

# Results-grid task column -> (annotation task, task-row condition)
TASK_COLUMNS: Dict[str, Tuple[Task, Condition]] = {
    'VM': (Task.VM, Condition.TASK),
    'ST': (Task.ST, Condition.TASK),
    'CSP-': (Task.TG, Condition.CSP_MINUS),
    'CSP+': (Task.TG, Condition.CSP_PLUS),
}
INDEX_NAMES = ('max', 'mean', 'sd')
_INDEX_LABELS = {'max': 'max{}', 'mean': 'a{}', 'sd': 'v{}'}


def index_label(index: str, kind: SknaKind) -> str:
    """maxSKNA / aSKNA / vSKNA style row label."""
    stem = 'SKNA' if kind == SknaKind.ISKNA else kind.value
    return _INDEX_LABELS[index].format(stem)


@dataclass(frozen=True)
class CellKey:
    channel: int
    rate: int
    kind: SknaKind
    task: str
    index: str


def cell_observations(frame: pd.DataFrame, key: CellKey) -> PairedObservations:
    """Task rows of a cell against the baselines paired with those same segments."""
    task, condition = TASK_COLUMNS[key.task]
    scope = frame[
        (frame['channel'] == key.channel)
        & (frame['rate'] == key.rate)
        & (frame['kind'] == key.kind.value)
        & (frame['task'] == task.value)
    ]
    task_rows = scope[scope['condition'] == condition.value]
    paired = set(zip(task_rows['participant'], task_rows['segment_id']))
    base_rows = scope[scope['condition'] == Condition.BASELINE.value]
    base_rows = base_rows[[
        (p, s) in paired for p, s in zip(base_rows['participant'], base_rows['segment_id'])
    ]]
    rows = [(p, 0, v) for p, v in zip(base_rows['participant'], base_rows[key.index])]
    rows += [(p, 1, v) for p, v in zip(task_rows['participant'], task_rows[key.index])]
    return PairedObservations.from_rows(rows)


def evaluate_cell(
    obs: PairedObservations,
    key: CellKey,
    icc_form: IccForm,
    config: Optional[Config] = None
) -> Dict:
    config = config or Config()
    record: Dict = {
        'channel': key.channel,
        'rate': key.rate,
        'kind': key.kind.value,
        'task': key.task,
        'index': key.index,
        'd': np.nan,
        'stars': '',
        'p_value': np.nan,
        'auc': np.nan,
        'icc': np.nan,
        'icc_display': np.nan,
        'icc_form': icc_form.value,
        'n_participants': len(obs.complete_participants()),
        'n_baseline': int(obs.group_values(0).size),
        'n_task': int(obs.group_values(1).size),
        'available': False,
    }
    if record['n_participants'] < 2:
        logger.debug(f"{key}: {record['n_participants']} complete participant(s); unavailable")
        return record

    try:
        fit = fit_lmm(obs, config)
        d = cohens_d(fit)
    except ModelError as e:
        logger.warning(f"{key}: LMM unavailable ({str(e)})")
        return record

    record.update({
        'd': d,
        'stars': significance_stars(fit.p_value, config),
        'p_value': fit.p_value,
        'auc': auc(obs.group_values(0), obs.group_values(1)),
        'available': True,
    })
    try:
        value = icc_both(obs.participant_means())[icc_form]
        record['icc'] = value
        record['icc_display'] = max(value, 0.0)
    except DataError as e:
        logger.warning(f"{key}: ICC undefined ({str(e)})")
    return record


@dataclass
class ResultsGrid:
    frame: pd.DataFrame
    icc_form: IccForm = IccForm.CONSISTENCY

    def __post_init__(self) -> None:
        Validator.validate_csv_headers(list(self.frame.columns), GRID_COLUMNS)
        self.frame = self.frame[GRID_COLUMNS].reset_index(drop=True)
        self.frame['stars'] = self.frame['stars'].fillna('').astype(str)
        self.frame['available'] = self.frame['available'].astype(bool)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def rates(self) -> List[int]:
        return sorted({int(r) for r in self.frame['rate']}, reverse=True)

    def cell_keys(self) -> List[Tuple]:
        """(channel, kind, task, index) cells independent of rate."""
        return sorted(set(zip(
            self.frame['channel'], self.frame['kind'], self.frame['task'], self.frame['index']
        )))

    def cell(self, channel: int, rate: int, kind: SknaKind, task: str, index: str) -> pd.Series:
        match = self.frame[
            (self.frame['channel'] == channel) & (self.frame['rate'] == rate)
            & (self.frame['kind'] == kind.value) & (self.frame['task'] == task)
            & (self.frame['index'] == index)
        ]
        if match.empty:
            raise DataError(f"No cell ch{channel} {rate} Hz {kind.value} {task} {index}")
        return match.iloc[0]

    def write_csv(self, path: Path, float_format: Optional[str] = None) -> None:
        float_format = float_format or Config().float_format
        logger.info(f"Writing results grid ({len(self.frame)} cells) to {path}")
        try:
            with atomic_path(path) as tmp:
                self.frame.to_csv(tmp, index=False, float_format=float_format)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")

    @classmethod
    def read_csv(cls, path: Path) -> 'ResultsGrid':
        if not path.exists():
            raise FileOperationError(f"File not found: {path}")
        try:
            frame = pd.read_csv(path, dtype={'stars': str}, keep_default_na=True)
        except pd.errors.EmptyDataError:
            raise FormatError(f"Empty results grid: {path}")
        except (OSError, pd.errors.ParserError) as e:
            raise FormatError(f"CSV parsing error: {str(e)}")
        Validator.validate_csv_headers(list(frame.columns), GRID_COLUMNS)
        forms = set(frame['icc_form'].dropna())
        form = IccForm.parse(forms.pop()) if len(forms) == 1 else IccForm.CONSISTENCY
        return cls(frame=frame, icc_form=form)

    def render_text(self) -> str:
        """Aligned text table: rows channel x rate x index, columns task x (d, AUC, ICC)."""
        blocks = []
        for kind in SknaKind:
            part = self.frame[self.frame['kind'] == kind.value]
            if part.empty:
                continue
            tasks = [t for t in TASK_COLUMNS if t in set(part['task'])]
            rows = []
            for channel in sorted(set(part['channel'])):
                for rate in sorted(set(part['rate']), reverse=True):
                    for index in INDEX_NAMES:
                        row: Dict = {
                            ('', 'Channel'): f"Ch{channel}",
                            ('', 'Rate'): f"{rate / 1000:g} kHz",
                            ('', 'Index'): index_label(index, kind),
                        }
                        for task in tasks:
                            cell = part[
                                (part['channel'] == channel) & (part['rate'] == rate)
                                & (part['task'] == task) & (part['index'] == index)
                            ]
                            row.update(_cell_text(task, cell))
                        rows.append(row)
            table = pd.DataFrame(rows)
            table.columns = pd.MultiIndex.from_tuples(table.columns)
            title = f"{kind.value} indices (ICC {self.icc_form.value})"
            blocks.append(title + '\n' + table.to_string(index=False))
        return '\n\n'.join(blocks) + '\n'

    def write_text(self, path: Path) -> None:
        try:
            with atomic_path(path) as tmp:
                tmp.write_text(self.render_text(), encoding='utf-8')
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")


def _cell_text(task: str, cell: pd.DataFrame) -> Dict[Tuple[str, str], str]:
    if cell.empty or not bool(cell['available'].iloc[0]):
        return {(task, 'd'): '-', (task, 'AUC'): '-', (task, 'ICC'): '-'}
    rec = cell.iloc[0]
    icc_text = '-' if pd.isna(rec['icc_display']) else f"{rec['icc_display']:.2f}"
    return {
        (task, 'd'): f"{rec['d']:.2f}{rec['stars']}",
        (task, 'AUC'): f"{rec['auc']:.2f}",
        (task, 'ICC'): icc_text,
    }


def evaluate_table(
    table: IndexTable,
    icc_form: Optional[IccForm] = None,
    config: Optional[Config] = None
) -> ResultsGrid:
    config = config or Config()
    icc_form = icc_form or IccForm.parse(config.icc_form)
    if len(table) == 0:
        raise DataError("Index table is empty")
    frame = table.to_frame()

    keys = [
        CellKey(int(channel), int(rate), SknaKind.parse(kind), task, index)
        for channel in sorted(set(frame['channel']))
        for rate in sorted(set(frame['rate']), reverse=True)
        for kind in [k.value for k in SknaKind if k.value in set(frame['kind'])]
        for task in TASK_COLUMNS
        if TASK_COLUMNS[task][0].value in set(frame['task'])
        for index in INDEX_NAMES
    ]
    logger.info(f"Evaluating {len(keys)} cells (ICC {icc_form.value}, {config.workers} worker(s))")

    def run(key: CellKey) -> Dict:
        return evaluate_cell(cell_observations(frame, key), key, icc_form, config)

    if config.workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(run, keys))
    else:
        records = [run(key) for key in keys]

    grid = ResultsGrid(frame=pd.DataFrame(records, columns=GRID_COLUMNS), icc_form=icc_form)
    available = int(grid.frame['available'].sum())
    logger.info(f"Evaluated {len(grid)} cells, {available} available")
    return grid


@dataclass
class RateComparison:
    reference_rate: int
    deltas: pd.DataFrame
    agreement: float
    correlations: pd.DataFrame = field(default_factory=pd.DataFrame)

    def write(self, out_dir: Path, float_format: Optional[str] = None) -> List[Path]:
        float_format = float_format or Config().float_format
        paths = [out_dir / 'rate_deltas.csv', out_dir / 'rate_correlations.csv']
        try:
            with atomic_path(paths[0]) as tmp:
                self.deltas.to_csv(tmp, index=False, float_format=float_format)
            with atomic_path(paths[1]) as tmp:
                self.correlations.to_csv(tmp, index=False, float_format=float_format)
        except OSError as e:
            raise FileOperationError(f"Failed to write file: {str(e)}")
        return paths

    def render_text(self) -> str:
        lines = [
            f"Reference rate: {self.reference_rate} Hz",
            f"Significance agreement: {self.agreement:.1%}",
        ]
        if not self.deltas.empty:
            summary = (
                self.deltas.groupby(['rate', 'kind'])[['delta_d', 'delta_auc', 'delta_icc']]
                .agg(lambda s: s.abs().max())
                .rename(columns=lambda c: f"max|{c}|")
            )
            lines += ['', summary.to_string(float_format=lambda v: f"{v:.3f}")]
        if not self.correlations.empty:
            lines += ['', 'Per-segment Pearson correlation across rates',
                      self.correlations.to_string(index=False, float_format=lambda v: f"{v:.3f}")]
        return '\n'.join(lines) + '\n'


def combine_grids(grids: Sequence[ResultsGrid]) -> ResultsGrid:
    if not grids:
        raise DataError("No results grids to compare")
    frame = pd.concat([g.frame for g in grids], ignore_index=True)
    duplicated = frame.duplicated(subset=['channel', 'rate', 'kind', 'task', 'index'])
    if duplicated.any():
        raise DataError("Results grids overlap on the same (channel, rate, kind, task, index) cells")
    return ResultsGrid(frame=frame, icc_form=grids[0].icc_form)


def segment_correlations(table: IndexTable) -> pd.DataFrame:
    """Pearson r of per-segment indices between every pair of rates."""
    frame = table.to_frame()
    records = []
    for (channel, kind), part in frame.groupby(['channel', 'kind'], sort=True):
        for index in INDEX_NAMES:
            wide = part.pivot_table(
                index=['participant', 'task', 'condition', 'segment_id'],
                columns='rate', values=index, aggfunc='first'
            )
            rates = sorted(wide.columns, reverse=True)
            for rate_a, rate_b in combinations(rates, 2):
                pair = wide[[rate_a, rate_b]].dropna()
                r = pair[rate_a].corr(pair[rate_b]) if len(pair) > 1 else np.nan
                records.append({
                    'channel': channel, 'kind': kind, 'index': index,
                    'rate_a': rate_a, 'rate_b': rate_b,
                    'pearson_r': r, 'n_segments': len(pair),
                })
    return pd.DataFrame(records, columns=[
        'channel', 'kind', 'index', 'rate_a', 'rate_b', 'pearson_r', 'n_segments'
    ])


def compare_rates(
    grid: ResultsGrid,
    table: Optional[IndexTable] = None
) -> RateComparison:
    """Deltas of d, AUC and ICC against the highest rate, plus star agreement."""
    rates = grid.rates
    if len(rates) < 2:
        raise DataError(f"Comparison needs grids from at least 2 rates, got {rates}")
    reference = rates[0]
    frame = grid.frame
    cells = {
        rate: set(zip(part['channel'], part['kind'], part['task'], part['index']))
        for rate, part in frame.groupby('rate')
    }
    for rate in rates[1:]:
        if cells[rate] != cells[reference]:
            raise DataError(
                f"Grid at {rate} Hz covers different cells than the {reference} Hz reference"
            )

    keys = ['channel', 'kind', 'task', 'index']
    ref = frame[frame['rate'] == reference].set_index(keys)
    records = []
    for rate in rates[1:]:
        other = frame[frame['rate'] == rate].set_index(keys)
        for key in sorted(cells[reference]):
            a, b = ref.loc[key], other.loc[key]
            both = bool(a['available']) and bool(b['available'])
            records.append({
                **dict(zip(keys, key)),
                'rate': rate,
                'reference_rate': reference,
                'delta_d': b['d'] - a['d'] if both else np.nan,
                'delta_auc': b['auc'] - a['auc'] if both else np.nan,
                'delta_icc': b['icc'] - a['icc'] if both else np.nan,
                'stars': b['stars'],
                'reference_stars': a['stars'],
                'stars_agree': (a['stars'] == b['stars']) if both else np.nan,
            })
    deltas = pd.DataFrame(records)
    compared = deltas['stars_agree'].dropna()
    agreement = float(compared.astype(bool).mean()) if len(compared) else float('nan')
    correlations = segment_correlations(table) if table is not None else pd.DataFrame()
    logger.info(
        f"Compared rates {rates} against {reference} Hz: star agreement {agreement:.1%}"
    )
    return RateComparison(reference, deltas, agreement, correlations)
