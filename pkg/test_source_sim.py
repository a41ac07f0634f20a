import io
import math
import time

import numpy as np
import pytest

from correlate import cross_correlate
from errors import OrderingError, ParameterError
from source_sim import (CHUNK_PULSES, REFERENCE_PARAMS, SimConfig, SourceParams, apply_dead_time, expected_moments,
                        pair_outcome_probabilities, simulate)
from tag_model import CHANNEL_A, CHANNEL_B, PulseClock, TagArray, encode_stream, validate_stream

MOMENT_DENSITIES = [0.1, 1.6, 16.0]
MOMENT_PULSES = 10 ** 8
MAX_SLOT = 50


def quiet_config(density, pulses, seed=3, resolution=165):
    return SimConfig(density, pulses, PulseClock(12500, 0), jitter_sigma=0, resolution=resolution, dead_time=0,
                     seed=seed)


def encoded(header, tags):
    sink = io.BytesIO()
    encode_stream(header, tags, sink)
    return sink.getvalue()


def test_pair_outcome_probabilities():
    outcomes = pair_outcome_probabilities(REFERENCE_PARAMS)

    assert outcomes.p_both == pytest.approx(1.26875e-4, rel=1e-12)
    assert outcomes.p_a_only == pytest.approx(2.4873125e-2, rel=1e-12)
    assert outcomes.p_b_only == pytest.approx(2.4873125e-2, rel=1e-12)
    assert sum(outcomes) == pytest.approx(1.0)
    # marginals are the singles efficiencies
    assert outcomes.p_both + outcomes.p_a_only == pytest.approx(REFERENCE_PARAMS.eta_sa)


def test_pair_outcome_probabilities_rejects_impossible_efficiencies():
    with pytest.raises(ParameterError):
        pair_outcome_probabilities(REFERENCE_PARAMS._replace(eta_sa=0.9, eta_sb=0.9, eta_x=0.0))


@pytest.mark.parametrize('changes', [
    {'alpha': -1e-3},
    {'eta_sa': 1.2},
    {'eta_x': 100.0},
])
def test_invalid_source_params(changes):
    with pytest.raises(ParameterError):
        REFERENCE_PARAMS._replace(**changes).validate()


def test_source_params_dict():
    assert SourceParams.from_dict(REFERENCE_PARAMS.to_dict()) == REFERENCE_PARAMS

    data = REFERENCE_PARAMS.to_dict()
    data['gamma'] = 1.0
    with pytest.raises(ParameterError):
        SourceParams.from_dict(data)

    del data['gamma']
    del data['eta_x']
    with pytest.raises(ParameterError):
        SourceParams.from_dict(data)


def test_sim_config_dict():
    cfg = SimConfig(1.6, 1000, PulseClock(10000, 5), jitter_sigma=50, resolution=100, dead_time=0, seed=4)

    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    assert SimConfig.from_dict({'density': 2, 'pulse_count': 10}) == SimConfig(2.0, 10)
    with pytest.raises(ParameterError):
        SimConfig.from_dict({'density': 2, 'pulse_count': 10, 'jitter': 5})
    with pytest.raises(ParameterError):
        SimConfig(1.0, 10, resolution=0).validate()


def test_expected_moments():
    moments = expected_moments(REFERENCE_PARAMS, 1.6)

    assert moments.c_a == pytest.approx(2.224e-4, rel=1e-4)
    assert moments.c_b == pytest.approx(3.024e-4, rel=1e-4)
    assert moments.off_slot == pytest.approx(6.725e-8, rel=1e-3)
    assert moments.slot_zero_excess == pytest.approx(0.203 * 0.025 ** 2 * 2.6e-3 * 1.6 ** 2, rel=1e-12)


def test_zero_density_gives_no_tags():
    header, tags = simulate(REFERENCE_PARAMS, SimConfig(0.0, 10 ** 6, seed=1))

    assert len(tags) == 0
    assert header.pulse_count == 10 ** 6


def test_zero_pulses():
    header, tags = simulate(REFERENCE_PARAMS, SimConfig(16.0, 0, seed=1))

    assert len(tags) == 0
    assert header.pulse_count == 0


def test_no_jitter_lands_on_pulses():
    header, tags = simulate(REFERENCE_PARAMS, quiet_config(16.0, 10 ** 5, resolution=100))

    assert len(tags) > 0
    assert (tags.timestamps % 12500 == 0).all()
    assert validate_stream(header, tags) == []


def test_quantization_grid():
    cfg = SimConfig(16.0, 10 ** 5, PulseClock(12500, 0), jitter_sigma=100, resolution=165, dead_time=0, seed=5)
    header, tags = simulate(REFERENCE_PARAMS, cfg)

    assert header.resolution == 165
    assert len(tags) > 0
    assert (tags.timestamps % 165 == 0).all()
    # jitter moves detections off the pulse centers
    assert (tags.timestamps % 12500 != 0).any()


def test_stream_invariants():
    cfg = SimConfig(16.0, 2 * 10 ** 5, seed=6)
    header, tags = simulate(REFERENCE_PARAMS, cfg)

    assert validate_stream(header, tags) == []
    for channel in (CHANNEL_A, CHANNEL_B):
        gaps = np.diff(tags.channel(channel).astype(np.int64))
        assert (gaps >= cfg.dead_time).all()


def test_same_seed_same_bytes():
    cfg = SimConfig(1.6, 10 ** 6, seed=42)

    assert encoded(*simulate(REFERENCE_PARAMS, cfg)) == encoded(*simulate(REFERENCE_PARAMS, cfg))
    assert simulate(REFERENCE_PARAMS, cfg._replace(seed=43))[1] != simulate(REFERENCE_PARAMS, cfg)[1]


def test_workers_do_not_change_output():
    cfg = SimConfig(1.6, CHUNK_PULSES + 10 ** 5, seed=8)

    assert simulate(REFERENCE_PARAMS, cfg, n_jobs=1) == simulate(REFERENCE_PARAMS, cfg, n_jobs=2)


def test_dead_time_example():
    assert list(apply_dead_time([0, 5000, 20000], 10000)) == [0, 20000]
    assert list(apply_dead_time([0, 10000, 15000, 20000], 10000)) == [0, 10000, 20000]
    assert list(apply_dead_time([], 10000)) == []


def test_dead_time_zero_is_identity():
    timestamps = np.array([0, 0, 3, 3, 10], dtype=np.uint64)

    assert list(apply_dead_time(timestamps, 0)) == list(timestamps)


def test_dead_time_errors():
    with pytest.raises(OrderingError) as e:
        apply_dead_time([0, 20, 10], 5)
    assert e.value.index == 2
    with pytest.raises(ParameterError):
        apply_dead_time([0, 10], -1)


def test_dead_time_properties():
    rng = np.random.default_rng(9)
    for _ in range(200):
        timestamps = np.sort(rng.integers(0, 10 ** 6, size=int(rng.integers(0, 300)))).astype(np.uint64)
        dead = int(rng.integers(0, 20000))
        kept = apply_dead_time(timestamps, dead)

        assert (np.diff(kept.astype(np.int64)) >= dead).all()
        assert list(apply_dead_time(kept, dead)) == list(kept)
        assert set(kept.tolist()) <= set(timestamps.tolist())
        assert len(apply_dead_time(timestamps, dead + 1000)) <= len(kept)


def test_dead_time_per_channel():
    tags = TagArray.from_channels([0, 5000, 20000], [1000, 4000, 30000])

    filtered = apply_dead_time(tags, 10000)
    assert list(filtered.channel(CHANNEL_A)) == [0, 20000]
    assert list(filtered.channel(CHANNEL_B)) == [1000, 30000]


def moment_sigmas(moments, pulses, off_slots):
    expected_off_sum = moments.off_slot * off_slots * pulses
    # slots sharing a tag are correlated
    off_sum_var = expected_off_sum + pulses * off_slots ** 2 * (moments.c_a * moments.c_b ** 2 +
                                                                 moments.c_a ** 2 * moments.c_b)
    off_err = math.sqrt(max(off_sum_var, 1.0)) / off_slots / pulses
    zero_count = (moments.slot_zero_excess + moments.off_slot) * pulses
    return off_err, math.sqrt(max(zero_count, 1.0) / pulses ** 2 + off_err ** 2)


@pytest.mark.parametrize('density', MOMENT_DENSITIES)
def test_moments(density):
    header, tags = simulate(REFERENCE_PARAMS, quiet_config(density, MOMENT_PULSES, seed=int(density * 100)))
    tags_a = tags.channel(CHANNEL_A)
    tags_b = tags.channel(CHANNEL_B)
    histogram = cross_correlate(tags_a, tags_b, header.clock, MAX_SLOT, header.pulse_count)

    moments = expected_moments(REFERENCE_PARAMS, density)
    pulses = float(MOMENT_PULSES)
    off_slots = 2 * MAX_SLOT
    off_mean = (histogram.total - histogram.count(0)) / off_slots / pulses
    zero_excess = histogram.count(0) / pulses - off_mean
    off_err, zero_err = moment_sigmas(moments, pulses, off_slots)

    assert abs(len(tags_a) / pulses - moments.c_a) <= 3 * math.sqrt(max(moments.c_a * pulses, 1.0)) / pulses
    assert abs(len(tags_b) / pulses - moments.c_b) <= 3 * math.sqrt(max(moments.c_b * pulses, 1.0)) / pulses
    assert abs(off_mean - moments.off_slot) <= 3 * off_err
    assert abs(zero_excess - moments.slot_zero_excess) <= 3 * zero_err


@pytest.mark.slow
def test_simulation_throughput():
    simulate(REFERENCE_PARAMS, SimConfig(1.6, 10 ** 5, seed=5))
    pulses = 2 * 10 ** 8

    start = time.perf_counter()
    simulate(REFERENCE_PARAMS, SimConfig(1.6, pulses, seed=6))
    elapsed = time.perf_counter() - start
    assert pulses / elapsed >= 1e7
