'''
Monte Carlo generator of two-channel tag streams.

Per excitation pulse at excitation density I (nJ/cm2):
  * correlated pairs ~ Poisson(alpha I^2), each one detected on both
    channels, on A only, on B only or on neither according to
    pair_outcome_probabilities
  * background photons on each channel ~ Poisson(beta I), thinned by the
    channel's singles efficiency
Detections then get Gaussian timing jitter, are quantized to the tagger
resolution and pass through a per-channel dead time filter.
'''
from collections import namedtuple
import logging

from joblib import Parallel, delayed
from numba import njit
import numpy as np

from errors import OrderingError, ParameterError
from tag_model import (DEFAULT_PERIOD_PS, DEFAULT_RESOLUTION_PS, PulseClock, TagArray,
                       TagStreamHeader)

log = logging.getLogger(__name__)

# pulses simulated per random sub-stream; fixed so that the output does not
# depend on the number of workers
CHUNK_PULSES = 1 << 22

DEFAULT_JITTER_SIGMA_PS = 100
DEFAULT_DEAD_TIME_PS = 10000


class SourceParams(namedtuple('SourceParams', ('alpha', 'beta_a', 'beta_b', 'eta_sa', 'eta_sb', 'eta_x'))):
    '''
    alpha: pairs/pulse/(nJ/cm2)^2
    beta_a, beta_b: background photons/pulse/(nJ/cm2) towards detector A, B
    eta_sa, eta_sb: singles detection efficiencies
    eta_x: joint detection factor, a detected-on-both probability of
           eta_x * eta_sa * eta_sb per pair
    '''
    def validate(self):
        for name in self._fields:
            value = getattr(self, name)
            if not value >= 0:
                raise ParameterError('%s must be nonnegative, got %s' % (name, value))
        for name in ('eta_sa', 'eta_sb'):
            if getattr(self, name) > 1:
                raise ParameterError('%s must be in [0, 1], got %s' % (name, getattr(self, name)))
        if self.eta_x * self.eta_sa * self.eta_sb > min(self.eta_sa, self.eta_sb):
            raise ParameterError('Joint detection probability %s exceeds a singles efficiency' %
                                 (self.eta_x * self.eta_sa * self.eta_sb, ))
        return self

    @classmethod
    def from_dict(cls, data):
        return cls(**_exact_fields(cls._fields, data, 'source parameters'))

    def to_dict(self):
        return dict(self._asdict())


# the parameter set fitted to the measured reference sweep
REFERENCE_PARAMS = SourceParams(alpha=2.6e-3, beta_a=1.4e-3, beta_b=3.4e-3, eta_sa=0.025, eta_sb=0.025, eta_x=0.203)


class SimConfig(namedtuple('SimConfig', ('density', 'pulse_count', 'clock', 'jitter_sigma', 'resolution',
                                         'dead_time', 'seed'))):
    def __new__(cls, density, pulse_count, clock=None, jitter_sigma=DEFAULT_JITTER_SIGMA_PS,
                resolution=DEFAULT_RESOLUTION_PS, dead_time=DEFAULT_DEAD_TIME_PS, seed=0):
        if clock is None:
            clock = PulseClock(DEFAULT_PERIOD_PS)
        return super(SimConfig, cls).__new__(cls, float(density), int(pulse_count), clock, float(jitter_sigma),
                                             int(resolution), int(dead_time), int(seed))

    def validate(self):
        for name in ('density', 'pulse_count', 'jitter_sigma', 'dead_time', 'seed'):
            if not getattr(self, name) >= 0:
                raise ParameterError('%s must be nonnegative, got %s' % (name, getattr(self, name)))
        if self.resolution <= 0:
            raise ParameterError('resolution must be positive, got %s' % (self.resolution, ))
        return self

    @classmethod
    def from_dict(cls, data):
        data = _exact_fields(cls._fields, data, 'simulation config', required=('density', 'pulse_count'))
        clock = data.get('clock')
        if isinstance(clock, dict):
            data['clock'] = PulseClock(**_exact_fields(PulseClock._fields, clock, 'pulse clock', required=()))
        return cls(**data)

    def to_dict(self):
        data = dict(self._asdict())
        data['clock'] = dict(self.clock._asdict())
        return data


PairOutcomes = namedtuple('PairOutcomes', ('p_both', 'p_a_only', 'p_b_only', 'p_none'))

Moments = namedtuple('Moments', ('c_a', 'c_b', 'slot_zero_excess', 'off_slot'))


# multinomial over the fate of one pair, chosen so that the singles rates and
# the slot-0 excess both come out as the rate equations state
def pair_outcome_probabilities(params):
    params.validate()
    p_both = params.eta_x * params.eta_sa * params.eta_sb
    p_a_only = params.eta_sa - p_both
    p_b_only = params.eta_sb - p_both
    p_none = 1.0 - p_a_only - p_b_only - p_both
    # rounding only
    if -1e-12 < p_none < 0:
        p_none = 0.0
    if p_none < 0:
        raise ParameterError('eta_sa + eta_sb - joint probability exceeds 1 (p_none = %s)' % (p_none, ))
    return PairOutcomes(p_both, p_a_only, p_b_only, p_none)


# per pulse means without jitter and dead time
def expected_moments(params, density):
    pairs = params.alpha * density ** 2
    c_a = params.eta_sa * (pairs + params.beta_a * density)
    c_b = params.eta_sb * (pairs + params.beta_b * density)
    return Moments(c_a, c_b, params.eta_x * params.eta_sa * params.eta_sb * pairs, c_a * c_b)


def simulate(params, cfg, n_jobs=1):
    params.validate()
    cfg.validate()
    probabilities = pair_outcome_probabilities(params)
    header = TagStreamHeader(cfg.clock, cfg.pulse_count, cfg.resolution)

    starts = list(range(0, cfg.pulse_count, CHUNK_PULSES))
    if not starts:
        return header, TagArray()
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(starts))

    log.debug('Simulating %d pulses at %s nJ/cm2 in %d chunks', cfg.pulse_count, cfg.density, len(starts))
    chunks = Parallel(n_jobs=n_jobs)(
        delayed(_simulate_chunk)(params, cfg, probabilities, start, min(start + CHUNK_PULSES, cfg.pulse_count), seed)
        for start, seed in zip(starts, seeds))

    upper = _last_grid_point(header.timestamp_bound - 1, cfg.resolution)
    channels = []
    for index in range(2):
        timestamps = np.concatenate([chunk[index] for chunk in chunks])
        # jitter may push a detection across a chunk boundary
        timestamps = np.sort(np.clip(timestamps, 0, upper), kind='stable')
        channels.append(apply_dead_time(timestamps, cfg.dead_time))

    tags = TagArray.from_channels(*channels)
    log.info('Simulated %d pulses at %s nJ/cm2: %d tags on A, %d on B', cfg.pulse_count, cfg.density,
             len(channels[0]), len(channels[1]))
    return header, tags


def _simulate_chunk(params, cfg, probabilities, start, stop, seed):
    rng = np.random.default_rng(seed)
    pulses = stop - start
    density = cfg.density

    # a Poisson count per pulse is the same as a Poisson total spread
    # uniformly over the pulses of the chunk
    n_pairs = rng.poisson(params.alpha * density ** 2 * pulses)
    n_both, n_a_only, n_b_only, _ = rng.multinomial(n_pairs, probabilities)
    n_background_a = rng.binomial(rng.poisson(params.beta_a * density * pulses), params.eta_sa)
    n_background_b = rng.binomial(rng.poisson(params.beta_b * density * pulses), params.eta_sb)

    both = rng.integers(start, stop, size=n_both)
    pulses_a = np.concatenate([both, rng.integers(start, stop, size=n_a_only + n_background_a)])
    pulses_b = np.concatenate([both, rng.integers(start, stop, size=n_b_only + n_background_b)])

    return _detection_times(pulses_a, cfg, rng), _detection_times(pulses_b, cfg, rng)


def _detection_times(pulses, cfg, rng):
    times = cfg.clock.origin + pulses.astype(np.int64) * cfg.clock.period
    if cfg.jitter_sigma > 0:
        times = times + rng.normal(0.0, cfg.jitter_sigma, size=len(times))
    # nearest point of the absolute resolution grid
    times = np.rint(np.asarray(times, dtype=np.float64) / cfg.resolution).astype(np.int64) * cfg.resolution
    return np.sort(times)


def _last_grid_point(value, resolution):
    return (value // resolution) * resolution


@njit
def _dead_time_keep(timestamps, dead):
    keep = np.zeros(len(timestamps), dtype=np.bool_)
    if len(timestamps) == 0:
        return keep
    keep[0] = True
    last = timestamps[0]
    for i in range(1, len(timestamps)):
        if timestamps[i] - last >= dead:
            keep[i] = True
            last = timestamps[i]
    return keep


# keeps a tag iff it comes at least `dead` ps after the last kept tag of its
# channel; accepts one channel's sorted timestamps or a TagArray
def apply_dead_time(tags, dead):
    if dead < 0:
        raise ParameterError('Dead time must be nonnegative, got %s' % (dead, ))

    if isinstance(tags, TagArray):
        index = tags.first_unsorted_index()
        if index is not None:
            raise OrderingError('Timestamps decrease', index)
        if dead == 0:
            return tags
        keep = np.zeros(len(tags), dtype=np.bool_)
        for channel in np.unique(tags.channels):
            selected = np.flatnonzero(tags.channels == channel)
            keep[selected] = _dead_time_keep(tags.timestamps[selected].astype(np.int64), np.int64(dead))
        return TagArray(tags.timestamps[keep], tags.channels[keep])

    timestamps = np.asarray(tags, dtype=np.uint64)
    decreasing = np.flatnonzero(timestamps[1:] < timestamps[:-1])
    if len(decreasing):
        raise OrderingError('Timestamps decrease', int(decreasing[0]) + 1)
    if dead == 0:
        return timestamps.copy()
    keep = _dead_time_keep(timestamps.astype(np.int64), np.int64(dead))
    return timestamps[keep]


def _exact_fields(fields, data, what, required=None):
    if not isinstance(data, dict):
        raise ParameterError('Expected a mapping for %s, got %s' % (what, type(data).__name__))
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ParameterError('Unknown %s fields: %s' % (what, ', '.join(unknown)))
    missing = [f for f in (fields if required is None else required) if f not in data]
    if missing:
        raise ParameterError('Missing %s fields: %s' % (what, ', '.join(missing)))
    return dict(data)
