'''
Pulsed two-channel coincidence histograms.

Every (a, b) detection pair lands in slot n = pulse(b) - pulse(a); slot 0
holds true and accidental coincidences from the same pulse, the other slots
only accidentals.
'''
from collections import namedtuple
import logging
import math

from joblib import Parallel, delayed
from numba import njit
import numpy as np

from errors import DegenerateHistogramError, InputError, OrderingError, ParameterError, ShapeError
from file_utils import FileUtils
from tag_model import CHANNEL_A, CHANNEL_B, DEFAULT_PERIOD_PS, TagArray, pulse_offsets

log = logging.getLogger(__name__)

DEFAULT_MAX_SLOT = 50


class CoincidenceHistogram(object):
    def __init__(self, max_slot, counts=None, pulse_count=0, period=DEFAULT_PERIOD_PS):
        if max_slot < 1:
            raise ParameterError('Slot radius must be at least 1, got %s' % (max_slot, ))
        if counts is None:
            counts = np.zeros(2 * max_slot + 1, dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (2 * max_slot + 1, ):
            raise ShapeError('Expected %d slots, got %s' % (2 * max_slot + 1, counts.shape))
        if (counts < 0).any():
            raise ParameterError('Negative coincidence count')
        counts.flags.writeable = False

        self._max_slot = int(max_slot)
        self._counts = counts
        self._pulse_count = int(pulse_count)
        self._period = int(period)

    @property
    def max_slot(self):
        return self._max_slot

    @property
    def counts(self):
        return self._counts

    @property
    def pulse_count(self):
        return self._pulse_count

    @property
    def period(self):
        return self._period

    @property
    def slots(self):
        return np.arange(-self._max_slot, self._max_slot + 1)

    @property
    def delays_ps(self):
        return self.slots * self._period

    def count(self, slot):
        if abs(slot) > self._max_slot:
            raise IndexError('Slot %d outside +-%d' % (slot, self._max_slot))
        return int(self._counts[slot + self._max_slot])

    @property
    def total(self):
        return int(self._counts.sum())

    # the histogram of the swapped pair of streams
    def reversed(self):
        return CoincidenceHistogram(self._max_slot, self._counts[::-1], self._pulse_count, self._period)

    def rows(self):
        return [(int(slot), int(delay), int(count))
                for slot, delay, count in zip(self.slots, self.delays_ps, self._counts)]

    def __eq__(self, other):
        if not isinstance(other, CoincidenceHistogram):
            return NotImplemented
        return (self._max_slot, self._pulse_count, self._period) == \
            (other._max_slot, other._pulse_count, other._period) and np.array_equal(self._counts, other._counts)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return 'CoincidenceHistogram(W=%d, pulses=%d, zero=%d, total=%d)' % (
            self._max_slot, self._pulse_count, self.count(0), self.total)


class CoincidenceRates(namedtuple('CoincidenceRates', ('c_s', 'c_r', 'car', 'c_s_err', 'c_r_err', 'car_err',
                                                       'zero_count', 'off_sum', 'off_slots', 'pulse_count'))):
    '''
    c_s, c_r: true and accidental coincidences per pulse, with Poisson
    standard errors; car is None when there are no accidentals.
    The raw counts are kept for the sweep CSV.
    '''
    def to_dict(self):
        return {
            'c_s_per_pulse': self.c_s,
            'c_s_err_per_pulse': self.c_s_err,
            'c_r_per_pulse': self.c_r,
            'c_r_err_per_pulse': self.c_r_err,
            'car_ratio': self.car,
            'car_err_ratio': self.car_err,
            'coinc_zero_count': self.zero_count,
            'coinc_off_sum_count': self.off_sum,
            'off_slots_count': self.off_slots,
            'pulses_count': self.pulse_count,
        }


# offsets are each tag's signed distance in ps from its own pulse, so a
# pair sits offsets_b - offsets_a away from its slot center
@njit
def _accumulate(pulses_a, offsets_a, pulses_b, offsets_b, max_slot, window, counts):
    lo = 0
    n_b = len(pulses_b)
    for i in range(len(pulses_a)):
        ka = pulses_a[i]
        while lo < n_b and pulses_b[lo] < ka - max_slot:
            lo += 1
        j = lo
        while j < n_b and pulses_b[j] <= ka + max_slot:
            n = pulses_b[j] - ka
            if window < 0 or 2 * abs(offsets_b[j] - offsets_a[i]) <= window:
                counts[n + max_slot] += 1
            j += 1


# pulse indices and in-pulse offsets of one sorted channel
def _pulses(tags, clock, name):
    if isinstance(tags, TagArray):
        tags = tags.timestamps
    try:
        return pulse_offsets(tags, clock, check_order=True)
    except OrderingError as e:
        raise OrderingError('Timestamps of %s decrease' % (name, ), e.index)


def _window_ps(window):
    if window is None:
        return -1
    if window <= 0:
        raise ParameterError('Coincidence window must be positive, got %s' % (window, ))
    return int(window)


def _check_max_slot(max_slot):
    if int(max_slot) < 1:
        raise ParameterError('Slot radius must be at least 1, got %s' % (max_slot, ))
    return int(max_slot)


# forward two-pointer sweep: O(N_A + N_B + coincidences counted)
# window, when given, keeps only pairs within window/2 ps of the slot center
def cross_correlate(tags_a, tags_b, clock, max_slot=DEFAULT_MAX_SLOT, pulse_count=0, window=None):
    max_slot = _check_max_slot(max_slot)
    window = _window_ps(window)
    pulses_a, offsets_a = _pulses(tags_a, clock, 'channel A')
    pulses_b, offsets_b = _pulses(tags_b, clock, 'channel B')

    counts = np.zeros(2 * max_slot + 1, dtype=np.int64)
    _accumulate(pulses_a, offsets_a, pulses_b, offsets_b, max_slot, window, counts)
    return CoincidenceHistogram(max_slot, counts, pulse_count, clock.period)


class StreamCorrelator(object):
    '''
    Correlates a merged, time-sorted tag stream fed chunk by chunk. An A tag
    is counted once every B tag that can share a slot with it has arrived, and
    B tags no pending A tag can reach are dropped, so memory stays bounded by
    the tags of about 2W pulses.
    '''
    def __init__(self, clock, max_slot=DEFAULT_MAX_SLOT, pulse_count=0, window=None):
        self._clock = clock
        self._max_slot = _check_max_slot(max_slot)
        self._pulse_count = pulse_count
        self._window = _window_ps(window)
        self._counts = np.zeros(2 * self._max_slot + 1, dtype=np.int64)

        empty = np.zeros(0, dtype=np.int64)
        self._pulses_a, self._offsets_a = empty, empty
        self._pulses_b, self._offsets_b = empty, empty
        self._last_timestamp = None
        self._fed = 0
        self._singles = {CHANNEL_A: 0, CHANNEL_B: 0}

    @property
    def singles_a(self):
        return self._singles[CHANNEL_A]

    @property
    def singles_b(self):
        return self._singles[CHANNEL_B]

    def feed(self, tags):
        if not len(tags):
            return
        timestamps = tags.timestamps
        index = tags.first_unsorted_index()
        if index is None and self._last_timestamp is not None and int(timestamps[0]) < self._last_timestamp:
            index = 0
        if index is not None:
            raise OrderingError('Timestamps decrease', self._fed + index)

        for channel in (CHANNEL_A, CHANNEL_B):
            selected = timestamps[tags.channels == channel]
            self._singles[channel] += len(selected)
            pulses, offsets = pulse_offsets(selected, self._clock)
            if channel == CHANNEL_A:
                self._pulses_a = np.concatenate([self._pulses_a, pulses])
                self._offsets_a = np.concatenate([self._offsets_a, offsets])
            else:
                self._pulses_b = np.concatenate([self._pulses_b, pulses])
                self._offsets_b = np.concatenate([self._offsets_b, offsets])

        self._last_timestamp = int(timestamps[-1])
        self._fed += len(tags)

        # later tags sit at this pulse or after it
        horizon = int(self._clock.pulse_index(self._last_timestamp))
        self._flush(horizon - self._max_slot)

    def finish(self):
        self._flush(None)
        return CoincidenceHistogram(self._max_slot, self._counts, self._pulse_count, self._clock.period)

    # counts the pending A tags below pulse `limit` (all of them for None)
    def _flush(self, limit):
        if limit is None:
            ready = len(self._pulses_a)
        else:
            ready = int(np.searchsorted(self._pulses_a, limit, side='left'))

        if ready:
            _accumulate(self._pulses_a[:ready], self._offsets_a[:ready], self._pulses_b, self._offsets_b,
                        self._max_slot, self._window, self._counts)
            self._pulses_a = self._pulses_a[ready:]
            self._offsets_a = self._offsets_a[ready:]

        if limit is not None:
            reachable = int(np.searchsorted(self._pulses_b, limit - self._max_slot, side='left'))
            self._pulses_b = self._pulses_b[reachable:]
            self._offsets_b = self._offsets_b[reachable:]


# correlates a TagStreamReader without loading the whole stream
def correlate_stream(reader, max_slot=DEFAULT_MAX_SLOT, window=None):
    header = reader.header
    correlator = StreamCorrelator(header.clock, max_slot, header.pulse_count, window)
    for chunk in reader.chunks():
        correlator.feed(chunk)
    histogram = correlator.finish()
    log.debug('Correlated %d tags: %r', reader.tags_read, histogram)
    return histogram, correlator.singles_a, correlator.singles_b


def histogram_merge(first, second):
    if first.max_slot != second.max_slot or first.period != second.period:
        raise ShapeError('Cannot merge histograms with (W, period) %s and %s' %
                         ((first.max_slot, first.period), (second.max_slot, second.period)))
    return CoincidenceHistogram(first.max_slot, first.counts + second.counts,
                                first.pulse_count + second.pulse_count, first.period)


def _correlate_partition(pulses_a, offsets_a, pulses_b, offsets_b, max_slot, period, window, pulse_count):
    counts = np.zeros(2 * max_slot + 1, dtype=np.int64)
    _accumulate(pulses_a, offsets_a, pulses_b, offsets_b, max_slot, window, counts)
    return CoincidenceHistogram(max_slot, counts, pulse_count, period)


def correlate_partitioned(tags_a, tags_b, clock, max_slot=DEFAULT_MAX_SLOT, pulse_count=0, partitions=1,
                          n_jobs=1, boundaries=None, window=None):
    '''
    Splits the A stream at pulse boundaries (evenly spaced over the pulse
    count unless `boundaries` are given) and correlates each part against the
    B tags within W pulses of it, so boundary coincidences are counted exactly
    once. The partial histograms are reduced with histogram_merge.
    '''
    max_slot = _check_max_slot(max_slot)
    window = _window_ps(window)
    pulses_a, offsets_a = _pulses(tags_a, clock, 'channel A')
    pulses_b, offsets_b = _pulses(tags_b, clock, 'channel B')

    if boundaries is None:
        if partitions < 1:
            raise ParameterError('Need at least one partition, got %s' % (partitions, ))
        boundaries = np.linspace(0, pulse_count, partitions + 1).astype(np.int64)[1:-1]
    boundaries = sorted(int(b) for b in boundaries)
    if any(b < 0 or b > pulse_count for b in boundaries):
        raise ParameterError('Partition boundaries must lie within [0, %d]' % (pulse_count, ))
    edges = [0] + boundaries + [pulse_count]

    jobs = []
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        # tags outside [0, pulse_count) belong to the first or last part
        start = 0 if i == 0 else int(np.searchsorted(pulses_a, lo, side='left'))
        stop = len(pulses_a) if i == len(edges) - 2 else int(np.searchsorted(pulses_a, hi, side='left'))
        if start < stop:
            b_start = int(np.searchsorted(pulses_b, pulses_a[start] - max_slot, side='left'))
            b_stop = int(np.searchsorted(pulses_b, pulses_a[stop - 1] + max_slot, side='right'))
        else:
            b_start = b_stop = 0
        jobs.append(delayed(_correlate_partition)(
            pulses_a[start:stop], offsets_a[start:stop], pulses_b[b_start:b_stop], offsets_b[b_start:b_stop],
            max_slot, clock.period, window, hi - lo))

    histograms = Parallel(n_jobs=n_jobs)(jobs)
    merged = histograms[0]
    for histogram in histograms[1:]:
        merged = histogram_merge(merged, histogram)
    return merged


def extract_rates(histogram, guard=0):
    if histogram.pulse_count <= 0:
        raise DegenerateHistogramError('Histogram covers no pulses')
    if guard < 0:
        raise ParameterError('Guard must be nonnegative, got %s' % (guard, ))

    slots = histogram.slots
    off = (slots != 0) & (np.abs(slots) > guard)
    off_slots = int(off.sum())
    if not off_slots:
        raise DegenerateHistogramError('No off-zero slots left with W=%d and guard=%d' %
                                       (histogram.max_slot, guard))

    pulses = float(histogram.pulse_count)
    zero = histogram.count(0)
    off_sum = int(histogram.counts[off].sum())

    c_r = off_sum / off_slots / pulses
    c_s = zero / pulses - c_r
    c_r_err = math.sqrt(off_sum) / off_slots / pulses
    c_s_err = math.sqrt(zero / pulses ** 2 + c_r_err ** 2)

    car = car_err = None
    if c_r > 0:
        car = c_s / c_r
        car_err = math.hypot(c_s_err / c_r, c_s * c_r_err / c_r ** 2)
    else:
        log.warning('No accidental coincidences in %r, CAR undefined', histogram)

    return CoincidenceRates(c_s, c_r, car, c_s_err, c_r_err, car_err, zero, off_sum, off_slots,
                            histogram.pulse_count)


def write_histogram(path, histogram):
    FileUtils.write_table(path, ['slot', 'delay_ps', 'count'], histogram.rows())


# pulse count is not part of the TSV, the caller supplies it
def read_histogram(path, pulse_count=0):
    rows = FileUtils.read_table(path, delimiter='\t')
    try:
        slots = [int(row['slot']) for row in rows]
        delays = [int(row['delay_ps']) for row in rows]
        counts = [int(row['count']) for row in rows]
    except (KeyError, TypeError, ValueError) as e:
        raise InputError('%s is not a histogram TSV: %s' % (path, e))

    max_slot = len(slots) // 2
    if max_slot < 1 or slots != list(range(-max_slot, max_slot + 1)):
        raise InputError('%s: slots must run from -W to W' % (path, ))
    period = delays[max_slot + 1] - delays[max_slot]
    if period <= 0 or delays != [slot * period for slot in slots]:
        raise InputError('%s: delays are not multiples of one pulse period' % (path, ))
    return CoincidenceHistogram(max_slot, counts, pulse_count, period)
