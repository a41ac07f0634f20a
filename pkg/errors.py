class PairSourceError(RuntimeError):
    pass


class FormatError(PairSourceError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = '%s at byte offset %d' % (message, offset)
        super(FormatError, self).__init__(message)
        self.offset = offset


class TruncationError(FormatError):
    pass


# index is the position of the offending tag, offset its byte offset when
# the tag came out of an encoded stream
class OrderingError(PairSourceError):
    def __init__(self, message, index=None, offset=None):
        if index is not None:
            message = '%s at index %d' % (message, index)
        if offset is not None:
            message = '%s (byte offset %d)' % (message, offset)
        super(OrderingError, self).__init__(message)
        self.index = index
        self.offset = offset


class RangeError(PairSourceError):
    def __init__(self, message, index=None):
        if index is not None:
            message = '%s at index %d' % (message, index)
        super(RangeError, self).__init__(message)
        self.index = index


class ParameterError(PairSourceError):
    pass


class DegenerateHistogramError(PairSourceError):
    pass


class ShapeError(PairSourceError):
    pass


# the design matrix of a fit does not determine all parameters
class DegeneracyError(PairSourceError):
    pass


class FitError(PairSourceError):
    pass


# bad command line usage or unusable input files, exits with status 2
class InputError(PairSourceError):
    pass
