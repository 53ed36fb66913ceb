import matplotlib.pyplot as plt
import numpy as np
import pytest

from src.models import SampleSeries, SegmentAnnotation, SknaKind, SknaSeries, Task
from src.pipelines import default_config
from src.plotting import render_rate_overlay, save_rate_overlay


def series_set(duration=4.0):
    out = []
    for kind in SknaKind:
        for rate in (4000, 1000, 500):
            t = np.arange(int(duration * rate)) / rate
            out.append(SknaSeries(
                kind, SampleSeries(1e-3 * (1.5 + np.sin(2 * np.pi * 0.5 * t)), float(rate)),
                default_config(rate), channel=1, participant_id='P01'
            ))
    return out


class TestRateOverlay:
    """Test cases for the rate overlay figure."""

    def teardown_method(self):
        plt.close("all")

    def test_panels_and_traces(self):
        """Test one panel per kind with one trace per rate."""
        fig = render_rate_overlay(series_set(), [SegmentAnnotation(Task.VM, 1.0, 2.0)])

        axes = fig.get_axes()
        assert len(axes) == 2
        for ax in axes:
            assert [line.get_label() for line in ax.get_lines()] == ['4 kHz', '1 kHz', '0.5 kHz']
        assert axes[0].get_ylabel() == 'iSKNA (mV)'

    def test_long_series_decimated(self):
        """Test traces are reduced to at most max_points."""
        fig = render_rate_overlay(series_set(duration=10.0), max_points=1000)

        for line in fig.get_axes()[0].get_lines():
            assert len(line.get_xdata()) <= 1000

    def test_single_kind(self):
        """Test a figure with only iSKNA."""
        only = [s for s in series_set() if s.kind == SknaKind.ISKNA]
        assert len(render_rate_overlay(only).get_axes()) == 1

    def test_svg_is_reproducible(self, tmp_path):
        """Test saving twice gives byte-identical SVG."""
        first, second = tmp_path / 'a.svg', tmp_path / 'b.svg'

        save_rate_overlay(series_set(), first, title='P01 LeadI')
        save_rate_overlay(series_set(), second, title='P01 LeadI')

        text = first.read_text()
        assert '<svg' in text
        assert 'P01 LeadI' in text
        assert first.read_bytes() == second.read_bytes()

    @pytest.mark.parametrize("max_points", [10, 100])
    def test_decimated_times_within_span(self, max_points):
        """Test decimated time stamps stay inside the series."""
        fig = render_rate_overlay(series_set(duration=2.0), max_points=max_points)

        for line in fig.get_axes()[0].get_lines():
            xdata = np.asarray(line.get_xdata())
            assert xdata.min() >= 0.0
            assert xdata.max() < 2.0
