'''
Time-tag streams and the PTAG binary format.

A PTAG file is a 40 byte header followed by fixed 16 byte records, little
endian throughout:

    0-3    magic "PTAG"           4-5    version (u16, 1)
    6-7    channel count (u16)    8-15   pulse period in ps (u64)
    16-23  pulse origin ps (u64)  24-31  pulse count (u64)
    32-39  resolution ps (u64)
    record: timestamp ps (u64), channel (u8), 7 zero bytes
'''
from collections import namedtuple
import io
import logging
import struct

from numba import njit
import numpy as np

from errors import FormatError, OrderingError, ParameterError, RangeError, TruncationError
from file_utils import FileUtils

log = logging.getLogger(__name__)

MAGIC = b'PTAG'
FORMAT_VERSION = 1
HEADER_SIZE = 40
RECORD_SIZE = 16

CHANNEL_A = 0
CHANNEL_B = 1
CHANNEL_COUNT = 2

DEFAULT_PERIOD_PS = 12500  # 80 MHz
DEFAULT_RESOLUTION_PS = 165

MAX_TIMESTAMP = 2 ** 64 - 1
MAX_CHANNEL = 255

_HEADER_STRUCT = struct.Struct('<4sHHQQQQ')

RECORD_DTYPE = np.dtype([('timestamp', '<u8'), ('channel', 'u1'), ('padding', 'u1', (7, ))])


TimeTag = namedtuple('TimeTag', ('timestamp', 'channel'))


class PulseClock(namedtuple('PulseClock', ('period', 'origin'))):
    def __new__(cls, period=DEFAULT_PERIOD_PS, origin=0):
        if int(period) <= 0:
            raise ParameterError('Pulse period must be positive, got %s' % (period, ))
        if int(origin) < 0:
            raise ParameterError('Pulse origin must be nonnegative, got %s' % (origin, ))
        return super(PulseClock, cls).__new__(cls, int(period), int(origin))

    # nearest pulse, halfway rounds up; defined for every t, scalars or arrays
    def pulse_index(self, t):
        if isinstance(t, np.ndarray):
            if t.dtype.kind == 'u':
                return pulse_offsets(t, self)[0]
            quotient, remainder = np.divmod(t.astype(np.int64) - self.origin, self.period)
            return quotient + (remainder >= self.period - remainder)
        t = int(t)
        return (2 * (t - self.origin) + self.period) // (2 * self.period)

    def pulse_time(self, index):
        return self.origin + index * self.period

    @property
    def repetition_rate_hz(self):
        return 1e12 / self.period


class TagStreamHeader(namedtuple('TagStreamHeader',
                                 ('version', 'clock', 'channel_count', 'pulse_count', 'resolution'))):
    def __new__(cls, clock=None, pulse_count=0, resolution=DEFAULT_RESOLUTION_PS,
                channel_count=CHANNEL_COUNT, version=FORMAT_VERSION):
        if clock is None:
            clock = PulseClock()
        return super(TagStreamHeader, cls).__new__(cls, int(version), clock, int(channel_count),
                                                   int(pulse_count), int(resolution))

    # exclusive upper bound on the timestamps the stream may hold
    @property
    def timestamp_bound(self):
        return self.clock.origin + (self.pulse_count + 1) * self.clock.period

    def pack(self):
        if self.channel_count != CHANNEL_COUNT:
            raise RangeError('Streams carry %d channels, got %d' % (CHANNEL_COUNT, self.channel_count))
        if not 0 <= self.version < 2 ** 16:
            raise RangeError('Header version %d does not fit in 16 bits' % (self.version, ))
        for name, value in (('pulse count', self.pulse_count), ('resolution', self.resolution)):
            if not 0 <= value <= MAX_TIMESTAMP:
                raise RangeError('Header %s %d does not fit in 64 bits' % (name, value))
        return _HEADER_STRUCT.pack(MAGIC, self.version, self.channel_count, self.clock.period,
                                   self.clock.origin, self.pulse_count, self.resolution)

    @classmethod
    def unpack(cls, data):
        if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
            raise FormatError('Bad magic %r' % (bytes(data[:len(MAGIC)]), ), 0)
        if len(data) < HEADER_SIZE:
            raise TruncationError('Truncated header', len(data))

        magic, version, channel_count, period, origin, pulse_count, resolution = _HEADER_STRUCT.unpack(data)
        if version != FORMAT_VERSION:
            raise FormatError('Unsupported version %d' % (version, ), 4)
        if channel_count != CHANNEL_COUNT:
            raise FormatError('Unsupported channel count %d' % (channel_count, ), 6)
        if period == 0:
            raise FormatError('Zero pulse period', 8)
        if resolution == 0:
            raise FormatError('Zero resolution', 32)

        return cls(PulseClock(period, origin), pulse_count, resolution, channel_count, version)


class TagArray(object):
    '''
    Columnar, read-only sequence of TimeTag: uint64 timestamps and uint8
    channels. Iterating or indexing yields TimeTag values.
    '''
    def __init__(self, timestamps=(), channels=()):
        timestamps = np.asarray(timestamps)
        channels = np.asarray(channels)
        if timestamps.shape != channels.shape or timestamps.ndim != 1:
            raise RangeError('Timestamps and channels must be 1-d arrays of equal length')
        self.__class__._check_range(timestamps, 0, MAX_TIMESTAMP, 'Timestamp')
        self.__class__._check_range(channels, 0, MAX_CHANNEL, 'Channel')

        self._timestamps = np.ascontiguousarray(timestamps, dtype=np.uint64)
        self._channels = np.ascontiguousarray(channels, dtype=np.uint8)
        self._timestamps.flags.writeable = False
        self._channels.flags.writeable = False

    @classmethod
    def from_tags(cls, tags):
        tags = list(tags)
        for index, (timestamp, channel) in enumerate(tags):
            if not 0 <= timestamp <= MAX_TIMESTAMP:
                raise RangeError('Timestamp %s out of the unsigned 64 bit range' % (timestamp, ), index)
            if not 0 <= channel <= MAX_CHANNEL:
                raise RangeError('Channel %s out of range' % (channel, ), index)
        return cls(np.array([t[0] for t in tags], dtype=np.uint64),
                   np.array([t[1] for t in tags], dtype=np.uint8))

    # merges two single channel timestamp arrays into one time-sorted stream,
    # channel A first on equal timestamps
    @classmethod
    def from_channels(cls, timestamps_a, timestamps_b):
        timestamps = np.concatenate([np.asarray(timestamps_a, dtype=np.uint64),
                                     np.asarray(timestamps_b, dtype=np.uint64)])
        channels = np.concatenate([np.full(len(timestamps_a), CHANNEL_A, dtype=np.uint8),
                                   np.full(len(timestamps_b), CHANNEL_B, dtype=np.uint8)])
        order = np.lexsort((channels, timestamps))
        return cls(timestamps[order], channels[order])

    @classmethod
    def concatenate(cls, arrays):
        arrays = list(arrays)
        if not arrays:
            return cls()
        return cls(np.concatenate([a.timestamps for a in arrays]),
                   np.concatenate([a.channels for a in arrays]))

    @property
    def timestamps(self):
        return self._timestamps

    @property
    def channels(self):
        return self._channels

    def channel(self, channel):
        return self._timestamps[self._channels == channel]

    # index of the first tag whose timestamp is below its predecessor's
    def first_unsorted_index(self):
        decreasing = np.flatnonzero(self._timestamps[1:] < self._timestamps[:-1])
        if len(decreasing):
            return int(decreasing[0]) + 1
        return None

    def __len__(self):
        return len(self._timestamps)

    def __getitem__(self, index):
        return TimeTag(int(self._timestamps[index]), int(self._channels[index]))

    def __iter__(self):
        for timestamp, channel in zip(self._timestamps.tolist(), self._channels.tolist()):
            yield TimeTag(timestamp, channel)

    def __eq__(self, other):
        if not isinstance(other, TagArray):
            return NotImplemented
        return np.array_equal(self._timestamps, other._timestamps) \
            and np.array_equal(self._channels, other._channels)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return 'TagArray(%d tags)' % (len(self), )

    @staticmethod
    def _check_range(values, low, high, name):
        if not len(values):
            return
        if values.dtype.kind not in 'iu':
            raise RangeError('%s values must be integers, got %s' % (name, values.dtype))
        # only compare against bounds the dtype can represent
        info = np.iinfo(values.dtype)
        if info.min < low:
            below = np.flatnonzero(values < low)
            if len(below):
                raise RangeError('%s %d out of range' % (name, values[below[0]]), int(below[0]))
        if info.max > high:
            above = np.flatnonzero(values > high)
            if len(above):
                raise RangeError('%s %d out of range' % (name, values[above[0]]), int(above[0]))


@njit
def _fill_pulse_offsets(timestamps, origin, period, check_order, pulses, offsets):
    # (0, -1) when done, (1, i) when timestamps decrease at i, (2, i) when
    # the pulse index of tag i does not fit int64
    limit = np.uint64(9223372036854775807)
    one = np.uint64(1)
    for i in range(len(timestamps)):
        t = timestamps[i]
        if check_order and i > 0 and t < timestamps[i - 1]:
            return 1, i
        if t >= origin:
            q = (t - origin) // period
            r = (t - origin) - q * period
            if r >= period - r:
                q += one
                offset = -np.int64(period - r)
            else:
                offset = np.int64(r)
            if q > limit:
                return 2, i
            pulses[i] = np.int64(q)
        else:
            q = (origin - t) // period
            r = (origin - t) - q * period
            if r > period - r:
                q += one
                offset = np.int64(period - r)
            else:
                offset = -np.int64(r)
            if q > limit:
                return 2, i
            pulses[i] = -np.int64(q)
        offsets[i] = offset
    return 0, -1


def pulse_offsets(timestamps, clock, check_order=False):
    '''
    Nearest pulse index of every uint64 timestamp and its signed offset in
    ps from that pulse, in one pass without leaving unsigned arithmetic, so
    the whole 64 bit range maps exactly. With check_order, decreasing
    timestamps raise OrderingError.
    '''
    timestamps = np.ascontiguousarray(timestamps, dtype=np.uint64)
    pulses = np.empty(len(timestamps), dtype=np.int64)
    offsets = np.empty(len(timestamps), dtype=np.int64)
    kind, index = _fill_pulse_offsets(timestamps, np.uint64(clock.origin), np.uint64(clock.period),
                                      check_order, pulses, offsets)
    if kind == 1:
        raise OrderingError('Timestamps decrease', int(index))
    if kind == 2:
        raise RangeError('Pulse index of timestamp %d does not fit 64 bits' % (timestamps[index], ), int(index))
    return pulses, offsets


Violation = namedtuple('Violation', ('invariant', 'index', 'message'))


def as_tag_array(tags):
    if isinstance(tags, TagArray):
        return tags
    return TagArray.from_tags(tags)


# writes the stream to sink (anything with a write(bytes) method) and
# returns the number of bytes written
def encode_stream(header, tags, sink, chunk_records=1 << 20):
    tags = as_tag_array(tags)
    index = tags.first_unsorted_index()
    if index is not None:
        raise OrderingError('Timestamps decrease', index)

    sink.write(header.pack())
    for start in range(0, len(tags), chunk_records):
        stop = min(start + chunk_records, len(tags))
        records = np.zeros(stop - start, dtype=RECORD_DTYPE)
        records['timestamp'] = tags.timestamps[start:stop]
        records['channel'] = tags.channels[start:stop]
        sink.write(records.tobytes())

    return HEADER_SIZE + RECORD_SIZE * len(tags)


class TagStreamReader(object):
    '''
    Streaming PTAG decoder: reads the header on construction, then chunks()
    yields TagArray blocks of at most chunk_records tags, so memory use does
    not depend on the stream length.
    '''
    DEFAULT_CHUNK_RECORDS = 1 << 16

    def __init__(self, source, chunk_records=DEFAULT_CHUNK_RECORDS):
        if isinstance(source, (bytes, bytearray, memoryview)):
            source = io.BytesIO(source)
        if chunk_records <= 0:
            raise ParameterError('chunk_records must be positive')
        self._source = source
        self._chunk_records = chunk_records
        self._header = TagStreamHeader.unpack(self._read(HEADER_SIZE))
        self._offset = HEADER_SIZE
        self._index = 0
        self._last_timestamp = None

    @property
    def header(self):
        return self._header

    @property
    def tags_read(self):
        return self._index

    def chunks(self):
        wanted = self._chunk_records * RECORD_SIZE
        while True:
            data = self._read(wanted)
            if not data:
                return

            full_records = len(data) // RECORD_SIZE
            if len(data) % RECORD_SIZE:
                raise TruncationError('Truncated record', self._offset + full_records * RECORD_SIZE)

            records = np.frombuffer(data, dtype=RECORD_DTYPE)
            self._check_records(records)

            self._last_timestamp = int(records['timestamp'][-1])
            self._offset += len(data)
            self._index += full_records
            yield TagArray(records['timestamp'].copy(), records['channel'].copy())

            if len(data) < wanted:
                return

    def _check_records(self, records):
        padded = np.flatnonzero(records['padding'].any(axis=1))
        if len(padded):
            raise FormatError('Nonzero record padding', self._record_offset(padded[0]))

        bad_channels = np.flatnonzero(records['channel'] >= CHANNEL_COUNT)
        if len(bad_channels):
            first = bad_channels[0]
            raise FormatError('Channel %d out of range' % (records['channel'][first], ),
                              self._record_offset(first))

        timestamps = records['timestamp']
        if self._last_timestamp is not None and int(timestamps[0]) < self._last_timestamp:
            raise OrderingError('Timestamps decrease', self._index, self._record_offset(0))
        decreasing = np.flatnonzero(timestamps[1:] < timestamps[:-1])
        if len(decreasing):
            first = int(decreasing[0]) + 1
            raise OrderingError('Timestamps decrease', self._index + first, self._record_offset(first))

    def _record_offset(self, index):
        return self._offset + int(index) * RECORD_SIZE

    # file objects may return short reads (pipes, sockets)
    def _read(self, size):
        parts = []
        remaining = size
        while remaining > 0:
            part = self._source.read(remaining)
            if not part:
                break
            parts.append(part)
            remaining -= len(part)
        return b''.join(parts)


def decode_stream(source):
    reader = TagStreamReader(source)
    tags = TagArray.concatenate(reader.chunks())
    log.debug('Decoded %d tags covering %d pulses', len(tags), reader.header.pulse_count)
    return reader.header, tags


# violations are data: an empty list means every header and tag invariant holds
def validate_stream(header, tags):
    violations = []

    if header.version != FORMAT_VERSION:
        violations.append(Violation('version', None, 'Unsupported version %d' % (header.version, )))
    if header.clock.period <= 0:
        violations.append(Violation('period', None, 'Pulse period must be positive'))
    if header.pulse_count < 0:
        violations.append(Violation('pulse-count', None, 'Pulse count must be nonnegative'))
    if header.resolution <= 0:
        violations.append(Violation('resolution', None, 'Resolution must be positive'))
    if header.channel_count != CHANNEL_COUNT:
        violations.append(Violation('channel-count', None, 'Unsupported channel count %d' % (header.channel_count, )))

    try:
        tags = as_tag_array(tags)
    except RangeError as e:
        violations.append(Violation('timestamp-range', e.index, str(e)))
        return violations

    index = tags.first_unsorted_index()
    if index is not None:
        violations.append(Violation('ordering', index, 'Timestamp decreases at index %d' % (index, )))

    bad_channels = np.flatnonzero(tags.channels >= CHANNEL_COUNT)
    if len(bad_channels):
        first = int(bad_channels[0])
        violations.append(Violation('channel-range', first,
                                    'Channel %d at index %d is not below %d' %
                                    (tags.channels[first], first, CHANNEL_COUNT)))

    if header.pulse_count >= 0 and header.clock.period > 0:
        late = np.flatnonzero(tags.timestamps >= np.uint64(min(header.timestamp_bound, MAX_TIMESTAMP)))
        if len(late):
            first = int(late[0])
            violations.append(Violation('timestamp-bound', first,
                                        'Timestamp %d at index %d beyond the %d covered pulses' %
                                        (tags.timestamps[first], first, header.pulse_count)))

    return violations


def read_stream_file(path):
    with open(path, 'rb') as f:
        return decode_stream(f)


def write_stream_file(path, header, tags):
    with FileUtils.atomic_open(path, binary=True) as f:
        size = encode_stream(header, tags, f)
    log.info('Wrote %d tags (%d bytes) to %s', len(tags), size, path)
    return size
