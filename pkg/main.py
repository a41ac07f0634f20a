import argparse
import json
import logging
import os
import sys

import yaml

from config import Config
from correlate import DEFAULT_MAX_SLOT, write_histogram
from errors import FormatError, InputError, OrderingError, PairSourceError
from file_utils import FileUtils
from projections import CwProjectionInput
from report import write_report
from source_sim import DEFAULT_DEAD_TIME_PS, DEFAULT_JITTER_SIGMA_PS, REFERENCE_PARAMS, SourceParams
from sweep_processor import SweepProcessor, parse_densities
from sweepfit import FitResult, SweepCounts, comparison_table, fit_sweep, read_sweep_csv, write_sweep_csv
from tag_model import DEFAULT_PERIOD_PS, DEFAULT_RESOLUTION_PS, PulseClock, write_stream_file

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

MANIFEST_FILE = 'manifest.json'
SWEEP_FILE = 'sweep.csv'
FIT_FILE = 'fit'

DEFAULT_PULSES = 10 ** 8
DEFAULT_SEED = 7
DEFAULT_DENSITIES = '0.05..16(log,8)'
DEFAULT_ETA_S = 0.025


class UsageParser(argparse.ArgumentParser):
    # usage errors take the same stderr line as every other error
    def error(self, message):
        raise InputError('%s: %s' % (self.prog, message))


class Main(object):
    @classmethod
    def run(cls, argv=None):
        parser = cls._parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return e.code
        except InputError as e:
            cls._report_error(e)
            return EXIT_USAGE

        try:
            config = cls._config(args)
            cls._setup_logging(args, config)
            return args.handler(args, config) or EXIT_OK
        except InputError as e:
            cls._report_error(e)
            return EXIT_USAGE
        except Exception as e:
            if not isinstance(e, PairSourceError):
                log.debug('Unexpected failure', exc_info=True)
            cls._report_error(e)
            return EXIT_RUNTIME

    # one machine parsable line on stderr: error<TAB>kind<TAB>message
    @staticmethod
    def _report_error(error):
        message = ' '.join(str(error).split())
        sys.stderr.write('error\t%s\t%s\n' % (type(error).__name__, message))

    @staticmethod
    def _config(args):
        path = args.config
        if path is None:
            if not os.path.isfile(Config.DEFAULT_FILE):
                return Config()
            path = Config.DEFAULT_FILE
        try:
            return Config(path)
        except (OSError, yaml.YAMLError) as e:
            raise InputError('Cannot load config %s: %s' % (path, e))

    @staticmethod
    def _setup_logging(args, config):
        level = config.resolve(args.log_level, ('logging', 'level'), 'WARNING')
        logging.basicConfig(level=str(level).upper(), stream=sys.stderr,
                            format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    @classmethod
    def _parser(cls):
        common = UsageParser(add_help=False)
        common.add_argument('--config', help='YAML config file (default: ./config.yml if present)')
        common.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
        common.add_argument('--out', help='output directory (default: current directory)')
        common.add_argument('--format', choices=['json', 'tsv'], default='json')
        common.add_argument('--jobs', type=int, help='parallel workers')

        parser = UsageParser(prog='pairsource',
                            description='Characterize pulsed photon-pair sources from time tags')
        commands = parser.add_subparsers(dest='command', metavar='command')
        commands.required = True

        simulate = commands.add_parser('simulate', parents=[common], help='simulate PTAG streams for a sweep')
        simulate.add_argument('--densities', help='list "0.1,1.6" or range "0.05..16(log,8)", nJ/cm2')
        simulate.add_argument('--pulses', type=_count, help='pulses per density, eg 1e9')
        simulate.add_argument('--seed', type=int)
        simulate.add_argument('--params', help='source parameters, JSON file or inline JSON')
        simulate.add_argument('--period', type=int, help='pulse period in ps')
        simulate.add_argument('--jitter', type=float, help='Gaussian timing jitter sigma in ps')
        simulate.add_argument('--resolution', type=int, help='timestamp quantization step in ps')
        simulate.add_argument('--dead-time', type=int, help='per channel dead time in ps')
        simulate.set_defaults(handler=cls.cmd_simulate)

        correlate = commands.add_parser('correlate', parents=[common], help='coincidence histograms and rates')
        correlate.add_argument('streams', nargs='*', help='PTAG files')
        correlate.add_argument('--manifest', help='manifest.json written by simulate')
        correlate.add_argument('--density', type=float, help='density in nJ/cm2 of a single stream')
        correlate.add_argument('--window', type=int, help='slot radius W')
        correlate.add_argument('--guard', type=int, help='slots around 0 excluded from C_R')
        correlate.add_argument('--coincidence-window', type=int, help='intra-slot window in ps')
        correlate.set_defaults(handler=cls.cmd_correlate)

        fit = commands.add_parser('fit', parents=[common], help='fit the density model to a sweep')
        fit.add_argument('inputs', nargs='+', help='sweep CSV or rates JSON files')
        fit.add_argument('--eta-s', type=float, help='singles detection efficiency of both channels')
        fit.add_argument('--joint', action='store_true', help='refit all parameters against all observables')
        fit.set_defaults(handler=cls.cmd_fit)

        report = commands.add_parser('report', parents=[common], help='figures of merit, projections, plot data')
        report.add_argument('--fit', required=True, help='fit JSON written by fit')
        report.add_argument('--sweep', help='sweep CSV with the measured points')
        report.add_argument('--period', type=int, help='pulse period in ps')
        report.add_argument('--power', type=float, help='CW power in W')
        report.add_argument('--spot-diameter', type=float, help='spot diameter in m')
        report.add_argument('--photon-energy', type=float, help='pump photon energy in eV')
        report.add_argument('--pulse-duration', type=float, help='effective pulse duration in s')
        report.set_defaults(handler=cls.cmd_report)

        return parser

    @classmethod
    def cmd_simulate(cls, args, config):
        out = args.out or '.'
        densities = parse_densities(config.resolve(args.densities, ('simulation', 'densities'), DEFAULT_DENSITIES))
        params = cls._source_params(args, config)
        processor = cls._processor(args, config, params)
        seed = config.resolve(args.seed, ('simulation', 'seed'), DEFAULT_SEED)

        streams = []
        for index, density in enumerate(densities):
            name = 'sweep_%02d.ptag' % (index, )
            header, tags = processor.simulate_point(index, density)
            write_stream_file(os.path.join(out, name), header, tags)
            streams.append({'file': name, 'density_nj_cm2': density, 'seed': processor.point_seed(index),
                            'tags_count': len(tags)})

        manifest = {
            'params': params.to_dict(),
            'seed': int(seed),
            'pulses_count': processor.pulses,
            'streams': streams,
        }
        FileUtils.write_json(os.path.join(out, MANIFEST_FILE), manifest)
        log.info('Simulated %d densities into %s', len(densities), out)

    @classmethod
    def cmd_correlate(cls, args, config):
        out = args.out or '.'
        inputs = cls._correlate_inputs(args)
        processor = cls._processor(args, config, REFERENCE_PARAMS)

        sweep = []
        for path, density in inputs:
            if not os.path.isfile(path):
                raise InputError('No such file: %s' % (path, ))
            stem = os.path.splitext(os.path.basename(path))[0]
            try:
                histogram, rates, counts = processor.correlate_file(path, density)
            except (FormatError, OrderingError) as e:
                raise InputError('%s: %s' % (path, e))
            hz = 1e12 / histogram.period

            write_histogram(os.path.join(out, stem + '.hist.tsv'), histogram)
            data = rates.to_dict()
            data.update({
                'density_nj_cm2': density,
                'singles_a_count': counts.count_a,
                'singles_b_count': counts.count_b,
                'c_a_hz': counts.count_a / float(histogram.pulse_count) * hz,
                'c_b_hz': counts.count_b / float(histogram.pulse_count) * hz,
                'c_s_hz': rates.c_s * hz,
                'c_r_hz': rates.c_r * hz,
            })
            if args.format == 'json':
                FileUtils.write_json(os.path.join(out, stem + '.rates.json'), data)
            else:
                FileUtils.write_table(os.path.join(out, stem + '.rates.tsv'), ['field', 'value'],
                                      sorted(data.items()))
            if density is not None:
                sweep.append(counts)

        if sweep and len(sweep) == len(inputs):
            write_sweep_csv(os.path.join(out, SWEEP_FILE), sweep)
        log.info('Correlated %d streams:%r', len(inputs), processor.status)

    @classmethod
    def cmd_fit(cls, args, config):
        points = [counts.point() for counts in cls._sweep_counts(args.inputs)]
        if not points:
            raise InputError('no sweep points')

        eta_s = float(config.resolve(args.eta_s, ('fit', 'eta_s'), DEFAULT_ETA_S))
        result = fit_sweep(points, eta_s, eta_s, joint=args.joint)

        out = args.out or '.'
        if args.format == 'json':
            FileUtils.write_json(os.path.join(out, FIT_FILE + '.json'), result.to_dict())
        else:
            FileUtils.write_table(os.path.join(out, FIT_FILE + '.tsv'), ['field', 'value'],
                                  sorted((k, _tsv_value(v)) for k, v in result.to_dict().items()))
        log.info('Fit written to %s', out)

    @classmethod
    def cmd_report(cls, args, config):
        fit = FitResult.from_dict(FileUtils.read_json(args.fit))
        points = [counts.point() for counts in read_sweep_csv(args.sweep)] if args.sweep else []
        projection_input = CwProjectionInput(
            power_w=float(config.resolve(args.power, ('projection', 'power_w'), 1e-3)),
            spot_diameter_m=float(config.resolve(args.spot_diameter, ('projection', 'spot_diameter_m'), 1e-4)),
            photon_energy_ev=float(config.resolve(args.photon_energy, ('projection', 'photon_energy_ev'), 3.186)),
            pulse_duration_s=float(config.resolve(args.pulse_duration, ('projection', 'pulse_duration_s'), 1e-12)),
            params=fit.params)

        _, figures = write_report(args.out or '.', fit, points, projection_input, cls._clock(args, config))
        sys.stdout.write(str(comparison_table(figures)) + '\n')

    @staticmethod
    def _correlate_inputs(args):
        if args.manifest:
            manifest = FileUtils.read_json(args.manifest)
            base = os.path.dirname(args.manifest)
            try:
                return [(os.path.join(base, s['file']), float(s['density_nj_cm2'])) for s in manifest['streams']]
            except (KeyError, TypeError, ValueError) as e:
                raise InputError('Invalid manifest %s: %s' % (args.manifest, e))
        if not args.streams:
            raise InputError('No streams to correlate')
        if args.density is not None and len(args.streams) != 1:
            raise InputError('--density needs exactly one stream')
        return [(path, args.density) for path in args.streams]

    @staticmethod
    def _sweep_counts(paths):
        counts = []
        for path in paths:
            if path.endswith('.json'):
                data = FileUtils.read_json(path)
                try:
                    counts.append(SweepCounts(float(data['density_nj_cm2']), int(data['pulses_count']),
                                              int(data['singles_a_count']), int(data['singles_b_count']),
                                              int(data['coinc_zero_count']), int(data['coinc_off_sum_count']),
                                              int(data['off_slots_count'])))
                except (KeyError, TypeError, ValueError) as e:
                    raise InputError('%s is not a rates file with a density: %s' % (path, e))
                if not counts[-1].is_valid():
                    raise InputError('%s: invalid counts %s' % (path, counts[-1]))
            else:
                counts.extend(read_sweep_csv(path))
        return counts

    @staticmethod
    def _source_params(args, config):
        if args.params:
            text = args.params
            if not text.lstrip().startswith('{'):
                try:
                    with open(text) as f:
                        text = f.read()
                except OSError as e:
                    raise InputError('Cannot read params %s: %s' % (args.params, e))
            try:
                data = json.loads(text)
            except ValueError as e:
                raise InputError('Invalid params JSON: %s' % (e, ))
        else:
            data = config.get('source')
            if data is None:
                return REFERENCE_PARAMS
        try:
            return SourceParams.from_dict(data).validate()
        except PairSourceError as e:
            raise InputError(str(e))

    @staticmethod
    def _clock(args, config):
        return PulseClock(config.resolve(getattr(args, 'period', None), ('clock', 'period_ps'), DEFAULT_PERIOD_PS),
                          config.resolve(None, ('clock', 'origin_ps'), 0))

    @classmethod
    def _processor(cls, args, config, params):
        def setting(name, path, default):
            return config.resolve(getattr(args, name, None), path, default)

        return SweepProcessor(
            params, cls._clock(args, config),
            pulses=setting('pulses', ('simulation', 'pulses'), DEFAULT_PULSES),
            seed=setting('seed', ('simulation', 'seed'), DEFAULT_SEED),
            jitter_sigma=setting('jitter', ('simulation', 'jitter_sigma_ps'), DEFAULT_JITTER_SIGMA_PS),
            resolution=setting('resolution', ('simulation', 'resolution_ps'), DEFAULT_RESOLUTION_PS),
            dead_time=setting('dead_time', ('simulation', 'dead_time_ps'), DEFAULT_DEAD_TIME_PS),
            max_slot=setting('window', ('correlation', 'window'), DEFAULT_MAX_SLOT),
            guard=setting('guard', ('correlation', 'guard'), 0),
            window=setting('coincidence_window', ('correlation', 'coincidence_window_ps'), None),
            n_jobs=setting('jobs', ('jobs', ), 1))


def _count(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError('not a number: %s' % (text, ))
    if value < 0 or value != int(value):
        raise argparse.ArgumentTypeError('not a nonnegative integer: %s' % (text, ))
    return int(value)


def _tsv_value(value):
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    return '' if value is None else value


def cmd_simulate(argv):
    return Main.run(['simulate'] + list(argv))


def cmd_correlate(argv):
    return Main.run(['correlate'] + list(argv))


def cmd_fit(argv):
    return Main.run(['fit'] + list(argv))


def cmd_report(argv):
    return Main.run(['report'] + list(argv))


if __name__ == '__main__':
    sys.exit(Main.run())
