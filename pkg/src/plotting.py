import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .exceptions import FileOperationError  # noqa: E402
from .models import SegmentAnnotation, SknaKind, SknaSeries, Task  # noqa: E402
from .recording_io import atomic_path  # noqa: E402


logger = logging.getLogger(__name__)

MAX_POINTS = 4000
_TASK_COLOURS = {Task.VM: '#fde0c5', Task.ST: '#d6eaf8', Task.TG: '#e8daef'}


def _decimate_for_display(series: SknaSeries, max_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Block means so long series stay light in vector output."""
    samples = series.samples
    step = max(1, int(np.ceil(len(samples) / max_points)))
    usable = (len(samples) // step) * step
    if step == 1 or usable == 0:
        return series.series.times(), samples
    blocks = samples[:usable].reshape(-1, step).mean(axis=1)
    times = (np.arange(blocks.size) * step + (step - 1) / 2.0) / series.rate
    return times, blocks


def render_rate_overlay(
    series: Sequence[SknaSeries],
    annotations: Optional[Sequence[SegmentAnnotation]] = None,
    title: str = '',
    max_points: int = MAX_POINTS
) -> Figure:
    """One panel per SKNA kind, one trace per rate."""
    by_kind: Dict[SknaKind, List[SknaSeries]] = {}
    for s in series:
        by_kind.setdefault(s.kind, []).append(s)
    kinds = [k for k in SknaKind if k in by_kind]

    fig, axes = plt.subplots(len(kinds), 1, figsize=(10, 3 * len(kinds)), sharex=True, squeeze=False)
    for ax, kind in zip(axes[:, 0], kinds):
        for s in sorted(by_kind[kind], key=lambda s: -s.rate):
            times, values = _decimate_for_display(s, max_points)
            ax.plot(times, values, linewidth=0.8, label=f"{s.rate / 1000:g} kHz")
        for ann in annotations or ():
            if ann.label in _TASK_COLOURS:
                ax.axvspan(ann.start_s, ann.end_s, color=_TASK_COLOURS[ann.label], zorder=0)
        ax.set_ylabel(f"{kind.value} (mV)")
        ax.legend(loc='upper right', fontsize='small')
    axes[-1, 0].set_xlabel('Time (s)')
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def save_rate_overlay(
    series: Sequence[SknaSeries],
    path: Path,
    annotations: Optional[Sequence[SegmentAnnotation]] = None,
    title: str = ''
) -> None:
    fig = render_rate_overlay(series, annotations, title)
    logger.info(f"Writing rate overlay plot to {path}")
    try:
        # Fixed hash salt and no date keep the SVG byte-stable
        with matplotlib.rc_context({'svg.hashsalt': 'skna', 'svg.fonttype': 'none'}):
            with atomic_path(path) as tmp:
                fig.savefig(tmp, format='svg', metadata={'Date': None})
    except OSError as e:
        raise FileOperationError(f"Failed to write file: {str(e)}")
    finally:
        plt.close(fig)
