import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import pandas as pd

from .config import Config
from .evaluation import ResultsGrid, combine_grids, compare_rates, evaluate_table
from .exceptions import ConfigError, DataError, SknaException
from .indices import IndexTable, build_index_table
from .manifest import RunManifest
from .models import Recording, SegmentAnnotation, SknaKind
from .pipelines import (
    PipelineConfig,
    SknaEngine,
    default_config,
    notch_candidates,
    tvskna_spectrum,
)
from .plotting import save_rate_overlay
from .recording_io import RecordingFormat, RecordingIO
from .stats import IccForm
from .synth import annotation_path, load_synth_spec, write_cohort


logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Files this tool writes itself, never treated as cohort recordings
_OUTPUT_NAMES = {
    'index_table.csv', 'exclusions.csv', 'availability.csv',
    'results.csv', 'rate_deltas.csv', 'rate_correlations.csv',
}


class SknaApplication:

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.io = RecordingIO(self.config)
        self.engine = SknaEngine(config=self.config)
        self._written: List[Path] = []

    def run(self, args: argparse.Namespace) -> int:
        commands: Dict[str, Callable[[argparse.Namespace], None]] = {
            'synth': self.cmd_synth,
            'extract': self.cmd_extract,
            'indices': self.cmd_indices,
            'evaluate': self.cmd_evaluate,
            'compare-rates': self.cmd_compare_rates,
        }
        self._written = []
        try:
            logger.info("=" * 60)
            logger.info(f"skna {args.command} started")
            logger.info("=" * 60)

            if getattr(args, 'config', None):
                self.config.load_toml(args.config)
            if getattr(args, 'workers', None) is not None:
                if args.workers < 1:
                    raise ConfigError(f"--workers must be >= 1, got {args.workers}")
                self.config.workers = args.workers

            commands[args.command](args)

            logger.info(f"SUCCESS: skna {args.command} wrote {len(self._written)} file(s)")
            return EXIT_SUCCESS

        except ConfigError as e:
            self._fail(f"Configuration error: {str(e)}")
            return EXIT_USAGE
        except SknaException as e:
            self._fail(f"Application error: {str(e)}")
            return EXIT_FAILURE
        except Exception as e:
            logger.exception(f"Unexpected error: {str(e)}")
            self._remove_partial_outputs()
            return EXIT_FAILURE

    def _fail(self, message: str) -> None:
        logger.error(message)
        print(f"error: {message}", file=sys.stderr)
        self._remove_partial_outputs()

    def _output(self, path: Path) -> Path:
        self._written.append(path)
        return path

    def _remove_partial_outputs(self) -> None:
        for path in self._written:
            if path.exists():
                logger.info(f"Removing partial output {path}")
                path.unlink()
        self._written = []

    def _out_dir(self, args: argparse.Namespace) -> Path:
        return self.config.ensure_output_directory(args.out or self.config.output_dir)

    def _write_manifest(
        self,
        command: str,
        inputs: Sequence[Path],
        out_dir: Path,
        parameters: Dict
    ) -> None:
        manifest = RunManifest(
            command=command,
            inputs=[str(p) for p in inputs],
            output_dir=str(out_dir),
            parameters=parameters,
            outputs=[p.name for p in self._written],
        )
        manifest.write(self._output(out_dir / 'manifest.json'))

    def _pipeline_configs(self, rates: Sequence[int]) -> List[PipelineConfig]:
        return [default_config(rate, self.config) for rate in rates]

    def _run_parameters(self, configs: Sequence[PipelineConfig], kinds: Sequence[SknaKind]) -> Dict:
        return {
            'rates': [cfg.target_rate_hz for cfg in configs],
            'kinds': [kind.value for kind in kinds],
            'pipelines': [cfg.to_dict() for cfg in configs],
            'run': self.config.run_parameters(),
        }

    def _input_pairs(self, args: argparse.Namespace) -> Tuple[List[Path], List[Path]]:
        if getattr(args, 'cohort', None):
            if not args.cohort.is_dir():
                raise ConfigError(f"Cohort directory not found: {args.cohort}")
            recordings = sorted(
                p for p in args.cohort.iterdir()
                if p.suffix in ('.csv', '.bin') and p.name not in _OUTPUT_NAMES
                and not p.name.endswith('_annotations.csv')
            )
            if not recordings:
                raise DataError(f"No recordings in {args.cohort}")
            return recordings, [annotation_path(p) for p in recordings]

        recordings = list(getattr(args, 'recordings', None) or [])
        annotations = list(getattr(args, 'annotations', None) or [])
        if not recordings:
            raise ConfigError("Provide --recordings with --annotations, or --cohort")
        if len(recordings) != len(annotations):
            raise ConfigError(
                f"{len(recordings)} recording(s) but {len(annotations)} annotation file(s)"
            )
        return recordings, annotations

    def _load_recordings(self, paths: Sequence[Path]) -> Iterator[Recording]:
        for path in paths:
            yield self.io.load_recording(path)

    def _build_table(
        self,
        args: argparse.Namespace
    ) -> Tuple[IndexTable, List[Path], Dict]:
        rec_paths, ann_paths = self._input_pairs(args)
        annotations: List[List[SegmentAnnotation]] = [
            self.io.load_annotations(p) for p in ann_paths
        ]
        configs = self._pipeline_configs(args.rates)
        logger.info(f"Building index table for {len(rec_paths)} recording(s)")
        table = build_index_table(
            self._load_recordings(rec_paths), annotations, configs, args.kinds,
            engine=self.engine, config=self.config
        )
        parameters = self._run_parameters(configs, args.kinds)
        parameters['provenance'] = table.provenance
        return table, rec_paths + ann_paths, parameters

    # Commands

    def cmd_synth(self, args: argparse.Namespace) -> None:
        spec = load_synth_spec(args.spec)
        out_dir = self._out_dir(args)
        logger.info(f"Generating {spec.n_participants} synthetic participant(s) into {out_dir}")
        write_cohort(spec, out_dir, args.format, self.io, written=self._written)
        self._write_manifest(
            'synth', [args.spec], out_dir,
            {'spec': spec.to_dict(), 'format': args.format.value}
        )

    def cmd_extract(self, args: argparse.Namespace) -> None:
        configs = self._pipeline_configs(args.rates)
        recording = self.io.load_recording(args.recording)
        annotations = self.io.load_annotations(args.annotations) if args.annotations else []
        out_dir = self._out_dir(args)

        series = self.engine.extract(recording, configs, args.kinds)
        pid = recording.participant_id
        for s in series:
            name = f"{pid}_ch{s.channel}_{s.config.target_rate_hz}_{s.kind.value.lower()}.csv"
            self.io.write_series(s, self._output(out_dir / name))

        if args.plot:
            for channel in range(1, recording.n_channels + 1):
                mine = [s for s in series if s.channel == channel]
                path = self._output(out_dir / f"{pid}_ch{channel}_rates.svg")
                save_rate_overlay(
                    mine, path, annotations,
                    title=f"{pid} {recording.channel_names[channel - 1]}"
                )

        if args.peaks:
            for channel in range(1, recording.n_channels + 1):
                rows = [
                    (cfg.target_rate_hz, freq, psd)
                    for cfg in configs
                    for freq, psd in notch_candidates(recording.channel(channel), cfg)
                ]
                frame = pd.DataFrame(rows, columns=['rate', 'frequency_hz', 'psd'])
                self.io.write_table(frame, self._output(out_dir / f"{pid}_ch{channel}_peaks.csv"))

        if args.tfs:
            for channel in range(1, recording.n_channels + 1):
                for cfg in configs:
                    tfs = tvskna_spectrum(recording.channel(channel), cfg)
                    name = f"{pid}_ch{channel}_{cfg.target_rate_hz}_tfs.csv"
                    self.io.write_table(tfs.to_frame(), self._output(out_dir / name))

        inputs = [args.recording] + ([args.annotations] if args.annotations else [])
        parameters = self._run_parameters(configs, args.kinds)
        parameters['plot'] = bool(args.plot)
        parameters['peaks'] = bool(args.peaks)
        parameters['tfs'] = bool(args.tfs)
        self._write_manifest('extract', inputs, out_dir, parameters)

    def cmd_indices(self, args: argparse.Namespace) -> None:
        table, inputs, parameters = self._build_table(args)
        out_dir = self._out_dir(args)
        table.write_csv(self._output(out_dir / 'index_table.csv'))
        table.write_exclusions(self._output(out_dir / 'exclusions.csv'))
        table.write_availability(self._output(out_dir / 'availability.csv'))
        self._write_manifest('indices', inputs, out_dir, parameters)

    def cmd_evaluate(self, args: argparse.Namespace) -> None:
        if args.icc_form:
            self.config.icc_form = args.icc_form.value
        icc_form = IccForm.parse(self.config.icc_form)

        if args.table:
            table = IndexTable.read_csv(args.table)
            inputs = [args.table]
            parameters: Dict = {'run': self.config.run_parameters()}
        else:
            table, inputs, parameters = self._build_table(args)

        out_dir = self._out_dir(args)
        grid = evaluate_table(table, icc_form, self.config)
        grid.write_csv(self._output(out_dir / 'results.csv'))
        grid.write_text(self._output(out_dir / 'results.txt'))
        parameters['icc_form'] = icc_form.value
        self._write_manifest('evaluate', inputs, out_dir, parameters)
        print(grid.render_text())

    def cmd_compare_rates(self, args: argparse.Namespace) -> None:
        grid = combine_grids([ResultsGrid.read_csv(p) for p in args.grids])
        table = IndexTable.read_csv(args.table) if args.table else None
        comparison = compare_rates(grid, table)

        out_dir = self._out_dir(args)
        for path in comparison.write(out_dir):
            self._output(path)
        report = comparison.render_text()
        self._output(out_dir / 'rate_agreement.txt').write_text(report, encoding='utf-8')
        inputs = list(args.grids) + ([args.table] if args.table else [])
        self._write_manifest(
            'compare-rates', inputs, out_dir,
            {'reference_rate': comparison.reference_rate, 'rates': grid.rates}
        )
        print(report)


def _rate_list(text: str) -> List[int]:
    try:
        rates = [int(float(part)) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rate list {text!r}")
    if not rates:
        raise argparse.ArgumentTypeError("at least one rate is required")
    return rates


def _kind_list(text: str) -> List[SknaKind]:
    try:
        return [SknaKind.parse(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _icc_form(text: str) -> IccForm:
    try:
        return IccForm.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='skna',
        description='SKNA extraction from ECG at 4, 1 and 0.5 kHz with cross-rate statistics',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Synthetic 16-participant cohort
  skna synth --spec data/cohort.toml --out data/cohort

  # iSKNA and TVSKNA series at every rate, with a rate overlay plot
  skna extract --recording data/cohort/P01.csv --annotations data/cohort/P01_annotations.csv --plot

  # Index table, results grid and cross-rate agreement
  skna indices --cohort data/cohort --out results
  skna evaluate --table results/index_table.csv --out results
  skna compare-rates --grids results/results.csv --table results/index_table.csv --out results
        """
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', type=Path, help='Output directory')
    common.add_argument('--config', type=Path, help='Run configuration TOML')
    common.add_argument('--workers', type=int, help='Worker threads for pipeline units')
    common.add_argument('--verbose', action='store_true', help='Debug logging')

    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument(
        '--rates', type=_rate_list, default=[4000, 1000, 500],
        help='Comma-separated target rates in Hz (default 4000,1000,500)'
    )
    pipeline.add_argument(
        '--kinds', type=_kind_list, default=[SknaKind.ISKNA, SknaKind.TVSKNA],
        help='Comma-separated SKNA kinds: iskna,tvskna'
    )

    raw_inputs = argparse.ArgumentParser(add_help=False)
    raw_inputs.add_argument('--recordings', type=Path, nargs='+', help='Recording files')
    raw_inputs.add_argument('--annotations', type=Path, nargs='+', help='Annotation CSVs, one per recording')
    raw_inputs.add_argument('--cohort', type=Path, help='Directory of <id> recordings with <id>_annotations.csv')

    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', parents=[common], help='Generate a synthetic cohort')
    synth.add_argument('--spec', type=Path, required=True, help='Cohort spec TOML')
    synth.add_argument(
        '--format', type=RecordingFormat, choices=list(RecordingFormat),
        default=RecordingFormat.CSV, help='Recording file format'
    )

    extract = commands.add_parser('extract', parents=[common, pipeline], help='Extract SKNA series')
    extract.add_argument('--recording', type=Path, required=True, help='Recording file')
    extract.add_argument('--annotations', type=Path, help='Annotation CSV (shaded in plots)')
    extract.add_argument('--plot', action='store_true', help='SVG overlay of the rates per kind')
    extract.add_argument('--peaks', action='store_true', help='Spectral-peak report per channel (notch candidates)')
    extract.add_argument('--tfs', action='store_true', help='TVSKNA component amplitude and frequency per rate')

    commands.add_parser(
        'indices', parents=[common, pipeline, raw_inputs], help='Per-segment index table'
    )

    evaluate = commands.add_parser(
        'evaluate', parents=[common, pipeline, raw_inputs], help="Cohen's d, AUC and ICC grid"
    )
    evaluate.add_argument('--table', type=Path, help='Index table CSV')
    evaluate.add_argument(
        '--icc-form', type=_icc_form, help='consistency (ICC(3,1)) or one-way (ICC(1,1))'
    )

    compare = commands.add_parser('compare-rates', parents=[common], help='Cross-rate agreement')
    compare.add_argument('--grids', type=Path, nargs='+', required=True, help='Results grid CSVs')
    compare.add_argument('--table', type=Path, help='Index table CSV for per-segment correlations')

    return parser


def main(argv: Optional[Sequence[str]] = None) -> None:
    args = build_parser().parse_args(argv)
    config = Config()
    config.setup_logging(logging.DEBUG if args.verbose else None)

    app = SknaApplication(config)
    sys.exit(app.run(args))


if __name__ == '__main__':
    main()
