import os

import numpy as np

from sweepfit import SweepPoint
from tag_model import PulseClock, TagArray


def fixture_path(*subpath):
    return os.path.join(os.path.dirname(__file__), 'test_fixtures', *subpath)


# sorted uint64 timestamps spread over `pulses` pulses, with arbitrary
# offsets inside each period
def random_timestamps(rng, count, pulses, period=12500):
    return np.sort(rng.integers(0, pulses * period, size=count)).astype(np.uint64)


def random_stream(rng, count_a, count_b, pulses, period=12500):
    return TagArray.from_channels(random_timestamps(rng, count_a, pulses, period),
                                  random_timestamps(rng, count_b, pulses, period))


# all pairs through an outer difference: the oracle for the correlators
def brute_force_counts(timestamps_a, timestamps_b, clock, max_slot, window=None):
    times_a = np.asarray(timestamps_a, dtype=np.int64)
    times_b = np.asarray(timestamps_b, dtype=np.int64)
    slots = clock.pulse_index(times_b)[None, :] - clock.pulse_index(times_a)[:, None]
    used = np.abs(slots) <= max_slot
    if window is not None:
        offsets = times_b[None, :] - times_a[:, None] - slots * clock.period
        used &= 2 * np.abs(offsets) <= window
    return np.bincount((slots[used] + max_slot).astype(np.int64), minlength=2 * max_slot + 1)


# noiseless sweep points following the rate model exactly, errors from the
# counts the given number of pulses would give
def model_points(params, densities, pulses=10 ** 9):
    points = []
    for density in densities:
        pairs = params.alpha * density ** 2
        c_a = params.eta_sa * (pairs + params.beta_a * density)
        c_b = params.eta_sb * (pairs + params.beta_b * density)
        c_s = params.eta_x * params.eta_sa * params.eta_sb * pairs
        c_r = c_a * c_b
        points.append(SweepPoint(density, pulses, c_a, c_b, c_s, c_r,
                                 np.sqrt(c_a / pulses), np.sqrt(c_b / pulses),
                                 np.sqrt((c_s + c_r) / pulses), np.sqrt(c_r / pulses / 100)))
    return points


DEFAULT_CLOCK = PulseClock(12500, 0)
