"""Shared fixtures for the SKNA test suite."""

import numpy as np
import pytest

from src.config import Config
from src.models import Recording, SampleSeries
from src.synth import Jitter, SynthSpec


@pytest.fixture(autouse=True)
def fresh_config(tmp_path, monkeypatch):
    """Reset the config singleton and keep log files out of the working tree."""
    monkeypatch.setenv('SKNA_LOG_FILE', str(tmp_path / 'skna.log'))
    for name in ('SKNA_WORKERS', 'SKNA_LOG_LEVEL', 'SKNA_OUTPUT_DIR'):
        monkeypatch.delenv(name, raising=False)
    Config.reset()
    yield
    Config.reset()


@pytest.fixture
def make_sine():
    """Factory for sinusoidal SampleSeries."""
    def _make(freq, rate, duration, amplitude=1.0, phase=0.0):
        t = np.arange(int(round(duration * rate))) / rate
        return SampleSeries(amplitude * np.sin(2 * np.pi * freq * t + phase), rate)
    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def noise_recording(rng):
    """Two-channel 12 s white-noise recording at 4 kHz."""
    samples = 0.01 * rng.standard_normal((2, 48000))
    return Recording(('LeadI', 'LeadIII'), samples, 4000.0, 'P01')


@pytest.fixture
def small_spec():
    """A short cohort plan that keeps full pipeline runs fast."""
    return SynthSpec(
        n_participants=3,
        native_rate_hz=4000.0,
        plan_counts=(('VM', 2), ('TG', 2)),
        task_durations={'VM': 4.0, 'TG': 4.0},
        bursts_per_segment=2,
        burst_duration_s=1.0,
        lead_in_s=1.0,
        recovery_s=1.0,
        jitter=Jitter(heart_rate_bpm=3.0, amplitude_sigma=0.2, noise_fraction=0.05),
        seed=7,
    )
