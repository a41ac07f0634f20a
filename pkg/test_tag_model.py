import hashlib
import io
import struct

import numpy as np
import pytest

from errors import FormatError, OrderingError, ParameterError, RangeError, TruncationError
from tag_model import (HEADER_SIZE, RECORD_SIZE, PulseClock, TagArray, TagStreamHeader, TagStreamReader, TimeTag,
                       decode_stream, encode_stream, read_stream_file, validate_stream, write_stream_file)
from test_helpers import random_stream

GOLDEN_TAGS = 10 ** 6
GOLDEN_TIMESTAMP_SUM = 6249993914999835
GOLDEN_SHA256 = 'c88bdff5b65696054735751a13e9370341e5815b5a9fd8b32c2ccf0972b1c9b5'


def encode(header, tags):
    sink = io.BytesIO()
    size = encode_stream(header, tags, sink)
    data = sink.getvalue()
    assert size == len(data)
    return data


def small_stream():
    header = TagStreamHeader(PulseClock(12500, 0), pulse_count=4, resolution=1)
    tags = TagArray.from_tags([(0, 0), (7, 1), (12500, 0), (25003, 1), (37500, 0)])
    return header, tags


class ShortReads(object):
    def __init__(self, data, size):
        self._source = io.BytesIO(data)
        self._size = size

    def read(self, size):
        return self._source.read(min(size, self._size))


def test_pulse_index():
    clock = PulseClock(12500, 0)

    assert clock.pulse_index(0) == 0
    assert clock.pulse_index(6249) == 0
    assert clock.pulse_index(6250) == 1
    assert clock.pulse_index(18749) == 1
    assert clock.pulse_index(np.uint64(25000)) == 2
    assert clock.pulse_index(-6251) == -1
    assert list(clock.pulse_index(np.array([0, 12499, 12500, 40000], dtype=np.uint64))) == [0, 1, 1, 3]
    assert clock.repetition_rate_hz == pytest.approx(80e6)

    shifted = PulseClock(12500, 1000)
    assert shifted.pulse_index(1000) == 0
    assert shifted.pulse_index(0) == 0
    assert shifted.pulse_time(3) == 38500


def test_pulse_clock_rejects_zero_period():
    with pytest.raises(ParameterError):
        PulseClock(0)


def test_encode_empty_stream():
    header = TagStreamHeader(PulseClock(12500, 0), pulse_count=0, resolution=165)
    data = encode(header, [])

    assert len(data) == HEADER_SIZE
    assert data == b'PTAG' + struct.pack('<HHQQQQ', 1, 2, 12500, 0, 0, 165)
    assert decode_stream(data) == (header, TagArray())


def test_encode_one_tag():
    header = TagStreamHeader(PulseClock(12500, 0), pulse_count=1, resolution=165)
    data = encode(header, [TimeTag(12500, 0)])

    assert len(data) == 56
    assert data[:HEADER_SIZE] == bytes.fromhex('50544147010002' '00d430000000000000' '0000000000000000'
                                               '0100000000000000' 'a500000000000000')
    assert data[HEADER_SIZE:] == struct.pack('<Q', 12500) + b'\x00' * 8


def test_encode_size():
    header, tags = small_stream()

    assert len(encode(header, tags)) == HEADER_SIZE + RECORD_SIZE * len(tags)


def test_encode_unsorted():
    header = TagStreamHeader(pulse_count=10)

    with pytest.raises(OrderingError) as e:
        encode(header, [(0, 0), (200, 1), (100, 0)])
    assert e.value.index == 2


def test_encode_timestamp_overflow():
    header = TagStreamHeader(pulse_count=10)

    with pytest.raises(RangeError) as e:
        encode(header, [(0, 0), (2 ** 64, 1)])
    assert e.value.index == 1


def test_round_trip_small():
    header, tags = small_stream()
    decoded_header, decoded = decode_stream(encode(header, tags))

    assert decoded_header == header
    assert decoded == tags
    assert list(decoded) == [TimeTag(0, 0), TimeTag(7, 1), TimeTag(12500, 0), TimeTag(25003, 1), TimeTag(37500, 0)]


def test_round_trip_1000_tags():
    rng = np.random.default_rng(1)
    tags = random_stream(rng, 600, 400, pulses=5000)
    header = TagStreamHeader(PulseClock(12500, 0), pulse_count=5000, resolution=1)

    assert decode_stream(encode(header, tags)) == (header, tags)


def test_round_trip_random_streams():
    rng = np.random.default_rng(2)
    for _ in range(10 ** 4):
        pulses = int(rng.integers(1, 1000))
        period = int(rng.integers(1, 20000))
        tags = random_stream(rng, int(rng.integers(0, 20)), int(rng.integers(0, 20)), pulses, period)
        header = TagStreamHeader(PulseClock(period, int(rng.integers(0, 100))), pulse_count=pulses,
                                 resolution=int(rng.integers(1, 200)))
        assert decode_stream(encode(header, tags)) == (header, tags)


def test_golden_stream():
    index = np.arange(GOLDEN_TAGS, dtype=np.uint64)
    tags = TagArray(index * 12500 + (index % 3) * 165, (index % 2).astype(np.uint8))
    header = TagStreamHeader(PulseClock(12500, 0), pulse_count=GOLDEN_TAGS, resolution=165)
    data = encode(header, tags)

    assert hashlib.sha256(data).hexdigest() == GOLDEN_SHA256
    decoded_header, decoded = decode_stream(data)
    assert decoded_header == header
    assert len(decoded) == GOLDEN_TAGS
    assert int(decoded.timestamps.sum()) == GOLDEN_TIMESTAMP_SUM
    assert validate_stream(decoded_header, decoded) == []


def test_decode_bad_magic():
    header, tags = small_stream()
    data = b'GARB' + encode(header, tags)[4:]

    with pytest.raises(FormatError) as e:
        decode_stream(data)
    assert e.value.offset == 0


def test_decode_bad_version():
    header, tags = small_stream()
    data = bytearray(encode(header, tags))
    data[4] = 2

    with pytest.raises(FormatError) as e:
        decode_stream(bytes(data))
    assert e.value.offset == 4


def test_decode_channel_count():
    header, tags = small_stream()
    data = bytearray(encode(header, tags))
    data[6] = 3

    with pytest.raises(FormatError) as e:
        decode_stream(bytes(data))
    assert e.value.offset == 6


def test_encode_channel_count():
    with pytest.raises(RangeError):
        TagStreamHeader(channel_count=3).pack()


def test_decode_truncated_header():
    header, tags = small_stream()

    with pytest.raises(TruncationError) as e:
        decode_stream(encode(header, tags)[:20])
    assert e.value.offset == 20


def test_decode_truncated_record():
    header, tags = small_stream()
    data = encode(header, tags)

    with pytest.raises(TruncationError) as e:
        decode_stream(data[:HEADER_SIZE + 2 * RECORD_SIZE + 5])
    assert e.value.offset == HEADER_SIZE + 2 * RECORD_SIZE
    assert 'byte offset 72' in str(e.value)


def test_decode_nonzero_padding():
    header, tags = small_stream()
    data = bytearray(encode(header, tags))
    data[HEADER_SIZE + 3 * RECORD_SIZE + 12] = 1

    with pytest.raises(FormatError) as e:
        decode_stream(bytes(data))
    assert e.value.offset == HEADER_SIZE + 3 * RECORD_SIZE


def test_decode_channel_out_of_range():
    header, tags = small_stream()
    data = bytearray(encode(header, tags))
    data[HEADER_SIZE + RECORD_SIZE + 8] = 2

    with pytest.raises(FormatError) as e:
        decode_stream(bytes(data))
    assert e.value.offset == HEADER_SIZE + RECORD_SIZE


def test_decode_decreasing_timestamps():
    header, tags = small_stream()
    data = bytearray(encode(header, tags))
    data[HEADER_SIZE + 3 * RECORD_SIZE:HEADER_SIZE + 3 * RECORD_SIZE + 8] = struct.pack('<Q', 100)

    with pytest.raises(OrderingError) as e:
        decode_stream(bytes(data))
    assert e.value.index == 3
    assert e.value.offset == HEADER_SIZE + 3 * RECORD_SIZE


def test_decode_corruption_offsets_inside_the_stream():
    header, tags = small_stream()
    data = encode(header, tags)
    for position in range(HEADER_SIZE, len(data)):
        if (position - HEADER_SIZE) % RECORD_SIZE < 8:
            continue
        corrupted = bytearray(data)
        corrupted[position] = 0xff
        with pytest.raises(FormatError) as e:
            decode_stream(bytes(corrupted))
        assert HEADER_SIZE <= e.value.offset < len(data)


def test_reader_chunks():
    header, tags = small_stream()
    reader = TagStreamReader(encode(header, tags), chunk_records=2)
    chunks = list(reader.chunks())

    assert reader.header == header
    assert [len(c) for c in chunks] == [2, 2, 1]
    assert TagArray.concatenate(chunks) == tags
    assert reader.tags_read == len(tags)


def test_reader_ordering_across_chunks():
    header = TagStreamHeader(pulse_count=10)
    data = bytearray(encode(header, [(0, 0), (500, 0), (600, 1), (700, 0)]))
    data[HEADER_SIZE + 2 * RECORD_SIZE:HEADER_SIZE + 2 * RECORD_SIZE + 8] = struct.pack('<Q', 400)

    reader = TagStreamReader(bytes(data), chunk_records=2)
    with pytest.raises(OrderingError) as e:
        list(reader.chunks())
    assert e.value.index == 2
    assert e.value.offset == HEADER_SIZE + 2 * RECORD_SIZE


def test_reader_short_reads():
    header, tags = small_stream()

    reader = TagStreamReader(ShortReads(encode(header, tags), 7), chunk_records=3)
    assert TagArray.concatenate(reader.chunks()) == tags


def test_validate_valid_stream():
    header, tags = small_stream()

    assert validate_stream(header, tags) == []


def test_validate_ordering():
    header = TagStreamHeader(pulse_count=100)
    timestamps = [0, 10, 20, 30, 40, 35, 50]

    violations = validate_stream(header, [(t, 0) for t in timestamps])
    assert [(v.invariant, v.index) for v in violations] == [('ordering', 5)]


def test_validate_channel_range():
    header = TagStreamHeader(pulse_count=100)

    violations = validate_stream(header, [(0, 0), (10, 2)])
    assert [(v.invariant, v.index) for v in violations] == [('channel-range', 1)]


def test_validate_channels_ignore_header_count():
    header = TagStreamHeader(pulse_count=100, channel_count=3)

    violations = validate_stream(header, [(0, 0), (10, 2)])
    assert [(v.invariant, v.index) for v in violations] == [('channel-count', None), ('channel-range', 1)]


def test_validate_timestamp_bound():
    header = TagStreamHeader(PulseClock(12500, 0), pulse_count=2)

    assert validate_stream(header, [(37499, 0)]) == []
    violations = validate_stream(header, [(0, 0), (37500, 1)])
    assert [(v.invariant, v.index) for v in violations] == [('timestamp-bound', 1)]


def test_validate_header_and_range():
    header = TagStreamHeader(pulse_count=-1, resolution=0, version=3)

    invariants = [v.invariant for v in validate_stream(header, [(0, 0), (-5, 1)])]
    assert invariants == ['version', 'pulse-count', 'resolution', 'timestamp-range']


def test_tag_array():
    tags = TagArray.from_channels([0, 100, 300], [100, 200])

    assert list(tags.channels) == [0, 0, 1, 1, 0]
    assert list(tags.channel(1)) == [100, 200]
    assert tags[2] == TimeTag(100, 1)
    assert len(tags) == 5
    assert tags != TagArray.from_channels([0, 100], [100, 200])
    with pytest.raises(ValueError):
        tags.timestamps[0] = 5


def test_stream_file(tmp_path):
    header, tags = small_stream()
    path = str(tmp_path / 'out' / 'small.ptag')

    assert write_stream_file(path, header, tags) == HEADER_SIZE + RECORD_SIZE * len(tags)
    assert read_stream_file(path) == (header, tags)
