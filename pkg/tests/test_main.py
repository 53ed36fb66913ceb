"""Tests for the command-line application."""

import json

import numpy as np
import pytest

from src.config import Config
from src.exceptions import DataError
from src.main import (
    EXIT_FAILURE,
    EXIT_SUCCESS,
    EXIT_USAGE,
    SknaApplication,
    build_parser,
    main,
)
from src.models import Recording, SegmentAnnotation, SknaKind, Task
from src.recording_io import RecordingIO


SPEC_TOML = """
[cohort]
n_participants = 2
seed = 5
native_rate_hz = 4000

[burst]
count = 1
duration_s = 1.0

[plan]
VM = 1
TG = 1
lead_in_s = 0.5
recovery_s = 0.5
baseline_gap_s = 1.0

[plan.durations]
VM = 2
TG = 2
"""


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / 'cohort.toml'
    path.write_text(SPEC_TOML)
    return path


@pytest.fixture
def recording_files(tmp_path, rng):
    io = RecordingIO()
    rec = Recording(('LeadI', 'LeadIII'), 0.01 * rng.standard_normal((2, 48000)), 4000.0, 'P01')
    rec_path = tmp_path / 'in' / 'P01.csv'
    ann_path = tmp_path / 'in' / 'P01_annotations.csv'
    io.save_recording(rec, rec_path)
    io.save_annotations([SegmentAnnotation(Task.VM, 8.0, 2.0)], ann_path)
    return rec_path, ann_path


def run(argv):
    args = build_parser().parse_args(argv)
    return SknaApplication(Config()).run(args)


class TestParser:
    """Test cases for argument parsing."""

    def test_defaults(self):
        """Test default rates and kinds."""
        args = build_parser().parse_args(['indices', '--cohort', 'x'])

        assert args.rates == [4000, 1000, 500]
        assert args.kinds == [SknaKind.ISKNA, SknaKind.TVSKNA]

    def test_rate_and_kind_lists(self):
        """Test comma-separated options."""
        args = build_parser().parse_args(
            ['extract', '--recording', 'r.csv', '--rates', '1000,500', '--kinds', 'tvskna']
        )

        assert args.rates == [1000, 500]
        assert args.kinds == [SknaKind.TVSKNA]

    def test_missing_command(self):
        """Test a subcommand is required."""
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_bad_kind(self):
        """Test unknown kinds are usage errors."""
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(['extract', '--recording', 'r.csv', '--kinds', 'emg'])
        assert exc.value.code == 2


class TestSynthCommand:
    """Test cases for skna synth."""

    def test_writes_cohort_and_manifest(self, tmp_path, spec_file):
        """Test cohort files plus a manifest listing them."""
        out = tmp_path / 'cohort'

        assert run(['synth', '--spec', str(spec_file), '--out', str(out)]) == EXIT_SUCCESS

        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['command'] == 'synth'
        assert manifest['outputs'] == sorted([
            'P01.csv', 'P01_annotations.csv', 'P02.csv', 'P02_annotations.csv', 'ground_truth.json'
        ])
        assert (out / 'P02.csv').exists()

    def test_reproducible_manifest(self, tmp_path, spec_file):
        """Test the same cohort spec gives identical recordings and manifest digests."""
        run(['synth', '--spec', str(spec_file), '--out', str(tmp_path / 'a')])
        run(['synth', '--spec', str(spec_file), '--out', str(tmp_path / 'b')])

        a = json.loads((tmp_path / 'a' / 'manifest.json').read_text())
        b = json.loads((tmp_path / 'b' / 'manifest.json').read_text())
        assert a['config_digest'] == b['config_digest']
        assert (tmp_path / 'a' / 'P01.csv').read_bytes() == (tmp_path / 'b' / 'P01.csv').read_bytes()

    def test_missing_spec(self, tmp_path, capsys):
        """Test a missing cohort spec is a usage error with a message."""
        code = run(['synth', '--spec', str(tmp_path / 'nope.toml'), '--out', str(tmp_path)])

        assert code == EXIT_USAGE
        assert 'Spec file not found' in capsys.readouterr().err

    def test_main_exit_code(self, tmp_path, spec_file):
        """Test main() exits with the application status."""
        with pytest.raises(SystemExit) as exc:
            main(['synth', '--spec', str(spec_file), '--out', str(tmp_path / 'c')])
        assert exc.value.code == EXIT_SUCCESS


class TestExtractCommand:
    """Test cases for skna extract."""

    def test_series_per_channel_rate_kind(self, tmp_path, recording_files):
        """Test 2 channels x 3 rates x 2 kinds gives 12 series files."""
        rec_path, _ = recording_files
        out = tmp_path / 'series'

        assert run(['extract', '--recording', str(rec_path), '--out', str(out)]) == EXIT_SUCCESS

        series = sorted(p.name for p in out.glob('*.csv'))
        assert len(series) == 12
        assert 'P01_ch2_500_tvskna.csv' in series
        assert (out / 'P01_ch1_4000_iskna.csv').read_text().startswith('time_s,value\n')

    def test_plot(self, tmp_path, recording_files):
        """Test --plot adds one SVG per channel."""
        rec_path, ann_path = recording_files
        out = tmp_path / 'series'

        code = run([
            'extract', '--recording', str(rec_path), '--annotations', str(ann_path),
            '--rates', '1000,500', '--plot', '--out', str(out)
        ])

        assert code == EXIT_SUCCESS
        assert sorted(p.name for p in out.glob('*.svg')) == ['P01_ch1_rates.svg', 'P01_ch2_rates.svg']

    def test_peaks_and_tfs(self, tmp_path, recording_files):
        """Test --peaks writes one report per channel and --tfs one dump per channel and rate."""
        rec_path, _ = recording_files
        out = tmp_path / 'series'

        code = run([
            'extract', '--recording', str(rec_path), '--rates', '500', '--kinds', 'iskna',
            '--peaks', '--tfs', '--out', str(out)
        ])

        assert code == EXIT_SUCCESS
        assert (out / 'P01_ch1_peaks.csv').read_text().startswith('rate,frequency_hz,psd\n')
        tfs = (out / 'P01_ch2_500_tfs.csv').read_text().splitlines()
        assert tfs[0] == 'time_s,component,amplitude,frequency'
        assert len(tfs) == 1 + 4 * 6000
        manifest = json.loads((out / 'manifest.json').read_text())
        assert 'P01_ch1_500_tfs.csv' in manifest['outputs']
        assert manifest['parameters']['tfs'] is True

    def test_unsupported_rate(self, tmp_path, recording_files, capsys):
        """Test --rates 2000 exits with status 2."""
        rec_path, _ = recording_files

        code = run(['extract', '--recording', str(rec_path), '--rates', '2000', '--out', str(tmp_path)])

        assert code == EXIT_USAGE
        assert 'Unsupported rate 2000' in capsys.readouterr().err

    def test_missing_recording(self, tmp_path):
        """Test a missing input file is a failure."""
        code = run(['extract', '--recording', str(tmp_path / 'none.csv'), '--out', str(tmp_path)])
        assert code == EXIT_FAILURE

    def test_partial_outputs_removed(self, tmp_path, recording_files, monkeypatch):
        """Test series written before a failure are deleted."""
        rec_path, _ = recording_files
        out = tmp_path / 'series'

        def broken(*args, **kwargs):
            raise DataError("plot failed")

        monkeypatch.setattr('src.main.save_rate_overlay', broken)
        code = run(['extract', '--recording', str(rec_path), '--rates', '500', '--plot', '--out', str(out)])

        assert code == EXIT_FAILURE
        assert list(out.glob('*')) == []

    def test_invalid_workers(self, tmp_path, recording_files):
        """Test --workers 0 is a usage error."""
        rec_path, _ = recording_files
        code = run(['extract', '--recording', str(rec_path), '--workers', '0', '--out', str(tmp_path)])
        assert code == EXIT_USAGE

    def test_config_file(self, tmp_path, recording_files):
        """Test --config overrides flow into the manifest."""
        rec_path, _ = recording_files
        config_path = tmp_path / 'run.toml'
        config_path.write_text('[pipeline]\nsmoothing_window_s = 0.2\n')
        out = tmp_path / 'series'

        code = run([
            'extract', '--recording', str(rec_path), '--rates', '500', '--kinds', 'iskna',
            '--config', str(config_path), '--out', str(out)
        ])

        manifest = json.loads((out / 'manifest.json').read_text())
        assert code == EXIT_SUCCESS
        assert manifest['parameters']['run']['pipeline']['smoothing_window_s'] == 0.2

    def test_bad_config_file(self, tmp_path, recording_files):
        """Test an unknown config key exits with status 2."""
        rec_path, _ = recording_files
        config_path = tmp_path / 'run.toml'
        config_path.write_text('[pipeline]\nwindow = 0.2\n')

        code = run(['extract', '--recording', str(rec_path), '--config', str(config_path)])
        assert code == EXIT_USAGE


class TestIndicesAndEvaluate:
    """Test cases for skna indices and skna evaluate."""

    def test_indices_outputs(self, tmp_path, recording_files):
        """Test index table, exclusions and availability are written."""
        rec_path, ann_path = recording_files
        out = tmp_path / 'results'

        code = run([
            'indices', '--recordings', str(rec_path), '--annotations', str(ann_path),
            '--rates', '1000,500', '--out', str(out)
        ])

        assert code == EXIT_SUCCESS
        for name in ('index_table.csv', 'exclusions.csv', 'availability.csv', 'manifest.json'):
            assert (out / name).exists()
        assert len((out / 'index_table.csv').read_text().splitlines()) == 1 + 2 * 2 * 2 * 2

    def test_availability_written_atomically(self, tmp_path, recording_files):
        """Test availability.csv holds the summary and no temporary files remain."""
        rec_path, ann_path = recording_files
        out = tmp_path / 'results'

        run([
            'indices', '--recordings', str(rec_path), '--annotations', str(ann_path),
            '--rates', '500', '--kinds', 'iskna', '--out', str(out)
        ])

        lines = (out / 'availability.csv').read_text().splitlines()
        assert lines[0] == (
            'channel,task,participants_available,participants_total,'
            'segments_available,segments_total'
        )
        assert lines[1] == '1,VM,1,1,1,1'
        assert list(out.glob('.*')) == []

    def test_bad_icc_form_in_config(self, tmp_path, recording_files, capsys):
        """Test an unknown [stats] icc_form exits with status 2."""
        rec_path, ann_path = recording_files
        config_path = tmp_path / 'run.toml'
        config_path.write_text('[stats]\nicc_form = "two-way"\n')

        code = run([
            'evaluate', '--recordings', str(rec_path), '--annotations', str(ann_path),
            '--rates', '500', '--kinds', 'iskna', '--config', str(config_path),
            '--out', str(tmp_path / 'results')
        ])

        assert code == EXIT_USAGE
        assert 'icc_form' in capsys.readouterr().err

    def test_mismatched_inputs(self, tmp_path, recording_files):
        """Test recordings and annotations must pair up."""
        rec_path, _ = recording_files
        code = run(['indices', '--recordings', str(rec_path), str(rec_path), '--annotations', str(rec_path)])
        assert code == EXIT_USAGE

    def test_evaluate_single_participant(self, tmp_path, recording_files, capsys):
        """Test one participant evaluates to an all-unavailable grid."""
        rec_path, ann_path = recording_files
        out = tmp_path / 'results'
        run([
            'indices', '--recordings', str(rec_path), '--annotations', str(ann_path),
            '--rates', '500', '--kinds', 'iskna', '--out', str(out)
        ])

        code = run(['evaluate', '--table', str(out / 'index_table.csv'), '--out', str(out)])

        assert code == EXIT_SUCCESS
        assert (out / 'results.csv').exists()
        assert 'aSKNA' in capsys.readouterr().out

    def test_evaluate_empty_table(self, tmp_path):
        """Test an empty index table is a failure."""
        table = tmp_path / 'index_table.csv'
        table.write_text('participant,channel,rate,kind,task,condition,segment_id,max,mean,sd\n')

        assert run(['evaluate', '--table', str(table), '--out', str(tmp_path)]) == EXIT_FAILURE
        assert not (tmp_path / 'results.csv').exists()


class TestCompareRatesCommand:
    """Test cases for skna compare-rates."""

    def test_single_rate_grid(self, tmp_path, recording_files):
        """Test a grid with one rate cannot be compared."""
        rec_path, ann_path = recording_files
        out = tmp_path / 'results'
        run([
            'evaluate', '--recordings', str(rec_path), '--annotations', str(ann_path),
            '--rates', '500', '--kinds', 'iskna', '--out', str(out)
        ])

        code = run(['compare-rates', '--grids', str(out / 'results.csv'), '--out', str(out)])

        assert code == EXIT_FAILURE
        assert not (out / 'rate_deltas.csv').exists()

    def test_missing_grid(self, tmp_path):
        """Test a missing grid file is a failure."""
        assert run(['compare-rates', '--grids', str(tmp_path / 'none.csv')]) == EXIT_FAILURE


def test_outputs_are_numeric(tmp_path, recording_files):
    """Test extracted series parse back as finite numbers."""
    rec_path, _ = recording_files
    out = tmp_path / 'series'
    run(['extract', '--recording', str(rec_path), '--rates', '500', '--kinds', 'iskna', '--out', str(out)])

    data = np.loadtxt(out / 'P01_ch1_500_iskna.csv', delimiter=',', skiprows=1)
    assert data.shape == (6000, 2)
    assert np.all(np.isfinite(data))
