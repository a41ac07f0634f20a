import logging
import re

import numpy as np
from prettytable import PrettyTable

from correlate import correlate_partitioned, correlate_stream, extract_rates
from errors import InputError
from source_sim import SimConfig, simulate
from sweepfit import SweepCounts
from tag_model import CHANNEL_A, CHANNEL_B, TagStreamReader

log = logging.getLogger(__name__)

# eg 0.05..16(log,8) or 1..4(lin,4)
_RANGE_REGEX = re.compile(r'^\s*([0-9.eE+-]+)\s*\.\.\s*([0-9.eE+-]+)\s*\(\s*(log|lin)\s*,\s*([0-9]+)\s*\)\s*$')


def parse_densities(spec):
    '''
    Either a comma separated list of densities or a range spec
    "start..stop(log|lin,count)", stop included.
    '''
    if isinstance(spec, (list, tuple)):
        densities = [float(d) for d in spec]
    else:
        spec = str(spec)
        match = _RANGE_REGEX.match(spec)
        try:
            if match:
                start, stop, spacing, count = float(match.group(1)), float(match.group(2)), match.group(3), \
                    int(match.group(4))
                if count < 1:
                    raise InputError('Empty density range %s' % (spec, ))
                if spacing == 'log':
                    if start <= 0 or stop <= 0:
                        raise InputError('Log range needs positive bounds: %s' % (spec, ))
                    densities = np.geomspace(start, stop, count).tolist()
                else:
                    densities = np.linspace(start, stop, count).tolist()
            else:
                densities = [float(d) for d in spec.split(',') if d.strip()]
        except ValueError:
            raise InputError('Invalid density list %s' % (spec, ))

    if not densities:
        raise InputError('No densities in %s' % (spec, ))
    if any(not d >= 0 for d in densities):
        raise InputError('Densities must be nonnegative: %s' % (spec, ))
    return densities


class SweepStatus(object):
    def __init__(self):
        self._rows = []

    def add(self, density, tags_a, tags_b, rates):
        self._rows.append((density, tags_a, tags_b, rates))

    def __len__(self):
        return len(self._rows)

    def __repr__(self):
        return '\n' + str(self.table) + '\n'

    @property
    def table(self):
        table = PrettyTable()
        table.field_names = ['density nJ/cm2', 'tags A', 'tags B', 'C_S /pulse', 'C_R /pulse', 'CAR']
        for density, tags_a, tags_b, rates in self._rows:
            car = '%.3g' % (rates.car, ) if rates.car is not None else '-'
            table.add_row(['%.4g' % (density, ), tags_a, tags_b, '%.3e' % (rates.c_s, ), '%.3e' % (rates.c_r, ), car])
        return table


class SweepProcessor(object):
    '''
    Runs the simulate -> correlate chain for each density of a sweep and
    collects the raw counts of the sweep CSV.
    '''
    def __init__(self, params, clock, pulses, seed, jitter_sigma, resolution, dead_time,
                 max_slot, guard=0, window=None, n_jobs=1):
        self._params = params
        self._clock = clock
        self._pulses = int(pulses)
        self._seed = int(seed)
        self._jitter_sigma = jitter_sigma
        self._resolution = resolution
        self._dead_time = dead_time
        self._max_slot = max_slot
        self._guard = guard
        self._window = window
        self._n_jobs = n_jobs
        self._status = SweepStatus()

    @property
    def pulses(self):
        return self._pulses

    @property
    def status(self):
        return self._status

    # independent, reproducible seed per sweep point
    def point_seed(self, index):
        return int(np.random.SeedSequence([self._seed, index]).generate_state(1)[0])

    def sim_config(self, index, density):
        return SimConfig(density, self._pulses, self._clock, self._jitter_sigma, self._resolution, self._dead_time,
                         self.point_seed(index))

    def simulate_point(self, index, density):
        return simulate(self._params, self.sim_config(index, density), n_jobs=self._n_jobs)

    def correlate_tags(self, header, tags, density):
        tags_a = tags.channel(CHANNEL_A)
        tags_b = tags.channel(CHANNEL_B)
        histogram = correlate_partitioned(tags_a, tags_b, header.clock, self._max_slot, header.pulse_count,
                                          partitions=max(self._n_jobs, 1), n_jobs=self._n_jobs,
                                          window=self._window)
        return self._finish_point(density, histogram, len(tags_a), len(tags_b))

    def correlate_file(self, path, density):
        with open(path, 'rb') as f:
            reader = TagStreamReader(f)
            histogram, singles_a, singles_b = correlate_stream(reader, self._max_slot, self._window)
        return self._finish_point(density, histogram, singles_a, singles_b)

    def _finish_point(self, density, histogram, singles_a, singles_b):
        rates = extract_rates(histogram, self._guard)
        self._status.add(density, singles_a, singles_b, rates)
        counts = SweepCounts(density, histogram.pulse_count, singles_a, singles_b, rates.zero_count, rates.off_sum,
                             rates.off_slots)
        return histogram, rates, counts

    # the whole sweep in memory, without intermediate files
    def run(self, densities):
        counts = []
        for index, density in enumerate(densities):
            header, tags = self.simulate_point(index, density)
            counts.append(self.correlate_tags(header, tags, density)[2])
        log.info('Sweep done:%r', self._status)
        return counts
