"""Tests for the signal-processing primitives."""

import numpy as np
import pytest
from scipy import signal

from src.dsp import (
    FilterKind,
    FilterSpec,
    analytic_amplitude,
    anti_alias_taps,
    apply_filter,
    band_power,
    design_filter,
    filtfilt,
    frequency_response,
    interior_slice,
    kernel_length,
    moving_average,
    rectify,
    resample,
    spectral_peaks,
)
from src.exceptions import ConfigError, DataError
from src.models import SampleSeries


def rms(values):
    return float(np.sqrt(np.mean(np.square(values))))


class TestResample:
    """Test cases for polyphase resampling."""

    def test_preserves_in_band_amplitude(self, make_sine):
        """Test a 100 Hz sine keeps its amplitude from 10 kHz to 1 kHz."""
        y = resample(make_sine(100.0, 10000.0, 1.0), 1000.0)
        core = y.samples[interior_slice(len(y), 0.1)]

        assert rms(core) * np.sqrt(2) == pytest.approx(1.0, rel=0.01)

    def test_output_length(self, make_sine):
        """Test 1 s at 10 kHz gives 4000 samples at 4 kHz."""
        y = resample(make_sine(100.0, 10000.0, 1.0), 4000.0)
        assert len(y) == 4000
        assert y.rate == 4000.0

    def test_output_length_rounds(self):
        """Test the output length is round(n * ratio)."""
        y = resample(SampleSeries(np.zeros(12345), 10000.0), 4000.0)
        assert len(y) == 4938

    def test_suppresses_aliases(self, make_sine):
        """Test a 900 Hz tone does not alias into 1 kHz output."""
        y = resample(make_sine(900.0, 10000.0, 1.0), 1000.0)
        core = y.samples[interior_slice(len(y), 0.1)]

        assert rms(core) < 1e-3

    @pytest.mark.parametrize("freq", [510.0, 550.0, 600.0])
    def test_stopband_just_above_target_nyquist(self, make_sine, freq):
        """Test tones just above 500 Hz are at least 60 dB down at 1 kHz."""
        y = resample(make_sine(freq, 10000.0, 2.0), 1000.0)
        core = y.samples[interior_slice(len(y), 0.1)]

        assert 20 * np.log10(rms(core) * np.sqrt(2)) <= -60.0

    def test_passband_reaches_upper_iskna_band(self, make_sine):
        """Test a 380 Hz sine keeps its amplitude at 1 kHz."""
        y = resample(make_sine(380.0, 10000.0, 1.0), 1000.0)
        core = y.samples[interior_slice(len(y), 0.1)]

        assert rms(core) * np.sqrt(2) == pytest.approx(1.0, rel=0.01)

    def test_anti_alias_taps(self):
        """Test taps are odd-length with unit DC gain."""
        taps = anti_alias_taps(2, 5)

        assert len(taps) % 2 == 1
        assert taps.sum() == pytest.approx(1.0, rel=1e-3)

    def test_identity_rate(self, make_sine):
        """Test resampling to the same rate returns the samples unchanged."""
        x = make_sine(50.0, 1000.0, 0.5)
        assert np.array_equal(resample(x, 1000.0).samples, x.samples)

    def test_round_trip_band_limited(self):
        """Test 4 kHz -> 1 kHz -> 4 kHz for content below 0.4 of the lower Nyquist."""
        t = np.arange(8000) / 4000.0
        x = SampleSeries(
            np.sin(2 * np.pi * 50 * t) + 0.5 * np.sin(2 * np.pi * 120 * t)
            + 0.3 * np.sin(2 * np.pi * 180 * t + 0.4),
            4000.0
        )

        back = resample(resample(x, 1000.0), 4000.0)
        core = interior_slice(len(x), 0.1)

        assert rms(back.samples[core] - x.samples[core]) < 0.01 * rms(x.samples[core])

    @pytest.mark.parametrize("target", [0.0, -500.0, 3000.5])
    def test_invalid_target(self, make_sine, target):
        """Test non-positive or non-rational targets raise ConfigError."""
        with pytest.raises(ConfigError):
            resample(make_sine(10.0, 10000.0, 0.1), target)


class TestFilterDesign:
    """Test cases for Butterworth and notch design."""

    @pytest.mark.parametrize("rate,band", [
        (4000, (500.0, 1000.0)),
        (1000, (250.0, 500.0)),
        (500, (150.0, 250.0)),
    ])
    def test_band_edges_at_minus_3_db(self, rate, band):
        """Test every iSKNA band is -3 dB at its realised edges."""
        spec = FilterSpec.band(band, rate)
        sos = design_filter(spec, rate)
        gains = np.abs(frequency_response(sos, spec.edges_hz, rate))

        assert np.allclose(20 * np.log10(gains), -3.01, atol=0.5)

    def test_band_at_nyquist_becomes_highpass(self):
        """Test a band reaching Nyquist is realised as a highpass."""
        assert FilterSpec.band((150.0, 250.0), 500).kind == FilterKind.HIGHPASS
        assert FilterSpec.band((500.0, 1000.0), 4000).kind == FilterKind.BANDPASS

    def test_passband_center(self):
        """Test the 500-1000 Hz band passes 750 Hz."""
        sos = design_filter(FilterSpec(FilterKind.BANDPASS, (500.0, 1000.0)), 4000)
        assert abs(frequency_response(sos, [750.0], 4000)[0]) > 0.95

    def test_notch_depth_and_selectivity(self):
        """Test a 60 Hz Q=30 notch at 1 kHz."""
        sos = design_filter(FilterSpec(FilterKind.NOTCH, (60.0,), notch_q=30.0), 1000)
        gains = np.abs(frequency_response(sos, [60.0, 50.0], 1000))

        assert gains[0] < 0.03
        assert gains[1] > 0.9

    def test_highpass_blocks_dc(self):
        """Test a 150 Hz highpass at 500 Hz has no DC gain."""
        sos = design_filter(FilterSpec(FilterKind.HIGHPASS, (150.0,)), 500)
        assert abs(frequency_response(sos, [0.0], 500)[0]) < 1e-9

    @pytest.mark.parametrize("spec,rate", [
        (FilterSpec(FilterKind.BANDPASS, (500.0, 1000.0)), 4000),
        (FilterSpec(FilterKind.HIGHPASS, (150.0,)), 500),
        (FilterSpec(FilterKind.NOTCH, (180.0,)), 500),
        (FilterSpec(FilterKind.LOWPASS, (10.0,), order=8), 500),
    ])
    def test_stable(self, spec, rate):
        """Test all poles lie inside the unit circle."""
        _, poles, _ = signal.sos2zpk(design_filter(spec, rate))
        assert np.all(np.abs(poles) < 1.0)

    def test_edge_above_nyquist(self):
        """Test edges at or beyond Nyquist raise ConfigError."""
        with pytest.raises(ConfigError, match="outside"):
            design_filter(FilterSpec(FilterKind.BANDPASS, (200.0, 300.0)), 500)

    def test_invalid_specs(self):
        """Test malformed filter specs."""
        with pytest.raises(ConfigError):
            FilterSpec(FilterKind.BANDPASS, (300.0, 200.0))
        with pytest.raises(ConfigError):
            FilterSpec(FilterKind.HIGHPASS, (100.0, 200.0))


class TestZeroPhase:
    """Test cases for forward-backward filtering."""

    def setup_method(self):
        self.sos = design_filter(FilterSpec(FilterKind.BANDPASS, (500.0, 1000.0)), 4000)

    def test_dc_removed(self):
        """Test a DC input gives zero output through a bandpass."""
        y = filtfilt(self.sos, SampleSeries(np.full(4000, 3.0), 4000.0))
        assert np.max(np.abs(y.samples[interior_slice(4000, 0.1)])) < 1e-9

    def test_passband_sine_without_delay(self, make_sine):
        """Test a 750 Hz sine passes with squared gain and no phase shift."""
        x = make_sine(750.0, 4000.0, 1.0)
        y = filtfilt(self.sos, x)
        gain = abs(frequency_response(self.sos, [750.0], 4000)[0]) ** 2
        core = interior_slice(len(x), 0.1)

        assert gain > 0.9
        assert np.max(np.abs(y.samples[core] - gain * x.samples[core])) < 1e-3

    def test_linear(self, rng):
        """Test filtering is linear."""
        x, z = rng.standard_normal(4000), rng.standard_normal(4000)
        a, b = 2.5, -0.75

        lhs = filtfilt(self.sos, SampleSeries(a * x + b * z, 4000.0)).samples
        rhs = (
            a * filtfilt(self.sos, SampleSeries(x, 4000.0)).samples
            + b * filtfilt(self.sos, SampleSeries(z, 4000.0)).samples
        )
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_impulse_is_autocorrelation(self):
        """Test the impulse response equals the single-pass autocorrelation."""
        n, center, half = 8001, 4000, 300
        impulse = np.zeros(n)
        impulse[center] = 1.0

        y = filtfilt(self.sos, SampleSeries(impulse, 4000.0)).samples
        h = signal.sosfilt(self.sos, impulse[center:])
        r = np.correlate(h, h, mode='full')
        mid = h.size - 1

        assert np.allclose(y[center - half:center + half + 1], r[mid - half:mid + half + 1], atol=1e-9)

    def test_short_input(self):
        """Test inputs no longer than the edge padding raise DataError."""
        with pytest.raises(DataError, match="too short"):
            filtfilt(self.sos, SampleSeries(np.zeros(10), 4000.0))

    def test_apply_filter(self, make_sine):
        """Test apply_filter designs at the signal's own rate."""
        y = apply_filter(FilterSpec(FilterKind.HIGHPASS, (150.0,)), make_sine(20.0, 500.0, 2.0))
        assert rms(y.samples[interior_slice(len(y), 0.1)]) < 1e-3


class TestRectifyAndSmooth:
    """Test cases for rectification and moving average."""

    def test_rectify(self):
        """Test absolute value."""
        y = rectify(SampleSeries(np.array([-1.0, 2.0, -3.0]), 100.0))
        assert y.samples.tolist() == [1.0, 2.0, 3.0]

    def test_rectify_nonnegative_identity(self, rng):
        """Test non-negative input is unchanged."""
        x = SampleSeries(np.abs(rng.standard_normal(100)), 100.0)
        assert np.array_equal(rectify(x).samples, x.samples)

    def test_rectified_sine_mean(self, make_sine):
        """Test mean of |A sin| over whole periods is 2A/pi."""
        y = rectify(make_sine(50.0, 10000.0, 1.0, amplitude=3.0))
        assert np.mean(y.samples) == pytest.approx(6.0 / np.pi, rel=1e-3)

    def test_kernel_length(self):
        """Test 100 ms at 4 kHz is 400 samples."""
        assert kernel_length(0.1, 4000) == 400

    def test_constant_preserved(self):
        """Test a constant stays constant, including at the edges."""
        y = moving_average(SampleSeries(np.full(1000, 2.5), 1000.0), 0.1)
        assert np.allclose(y.samples, 2.5, atol=1e-12)

    def test_impulse_spreads_over_window(self):
        """Test an impulse becomes a plateau of height 1/L over L samples."""
        x = np.zeros(1000)
        x[500] = 1.0

        y = moving_average(SampleSeries(x, 1000.0), 0.1).samples

        assert int(np.sum(y > 1e-9)) == 100
        assert np.allclose(y[y > 1e-9], 0.01)

    def test_mean_preserved(self, rng):
        """Test the mean changes by at most window/duration of max|x|."""
        x = SampleSeries(rng.standard_normal(2000), 1000.0)
        y = moving_average(x, 0.1)
        bound = 0.1 / x.duration_s * np.max(np.abs(x.samples))

        assert abs(np.mean(y.samples) - np.mean(x.samples)) <= bound

    def test_window_below_one_sample(self):
        """Test windows shorter than a sample raise ConfigError."""
        with pytest.raises(ConfigError, match="shorter than one sample"):
            moving_average(SampleSeries(np.zeros(10), 100.0), 0.001)


class TestAnalyticAmplitude:
    """Test cases for Hilbert envelopes."""

    def test_sine_envelope(self, make_sine):
        """Test the envelope of A sin equals A away from the edges."""
        y = analytic_amplitude(make_sine(50.0, 1000.0, 2.0, amplitude=0.7))
        core = y.samples[interior_slice(len(y), 0.05)]

        assert np.allclose(core, 0.7, rtol=0.01)
        assert y.edge_guard == 100

    def test_zero_signal(self):
        """Test zero in, zero out."""
        y = analytic_amplitude(SampleSeries(np.zeros(256), 1000.0))
        assert np.all(y.samples == 0.0)

    def test_tracks_am_envelope(self):
        """Test an amplitude-modulated carrier recovers its envelope."""
        t = np.arange(2000) / 1000.0
        envelope = 1.0 + 0.5 * np.cos(2 * np.pi * 2 * t)
        y = analytic_amplitude(SampleSeries(envelope * np.cos(2 * np.pi * 200 * t), 1000.0))
        core = interior_slice(len(t), 0.1)

        assert rms(y.samples[core] - envelope[core]) < 0.02 * rms(envelope[core])

    def test_nonnegative(self, rng):
        """Test envelopes are non-negative."""
        y = analytic_amplitude(SampleSeries(rng.standard_normal(500), 500.0))
        assert np.all(y.samples >= 0)

    def test_too_short(self):
        """Test inputs below the minimum length."""
        with pytest.raises(DataError, match="at least 16"):
            analytic_amplitude(SampleSeries(np.zeros(8), 100.0))


class TestSpectrum:
    """Test cases for spectral helpers."""

    def test_mains_peak_detected(self, rng):
        """Test a 60 Hz hum is the dominant peak."""
        t = np.arange(10000) / 1000.0
        x = SampleSeries(0.1 * rng.standard_normal(t.size) + np.sin(2 * np.pi * 60 * t), 1000.0)

        peaks = spectral_peaks(x)

        assert peaks
        assert abs(peaks[0][0] - 60.0) < 2.0

    def test_band_power_of_sine(self, make_sine):
        """Test a whole-bin sine has power A^2/2 inside its band."""
        x = make_sine(100.0, 1000.0, 1.0, amplitude=2.0)

        assert band_power(x, (90.0, 110.0)) == pytest.approx(2.0, rel=1e-9)
        assert band_power(x, (200.0, 300.0)) < 1e-12
