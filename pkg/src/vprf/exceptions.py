"""Exception types raised across the package."""


class VprfError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VprfError, ValueError):
    """A file does not conform to its declared format.

    ``record`` is the 0-based record index (or 1-based line number for
    text formats) at which the problem was found, when known.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class DimensionMismatchError(VprfError, ValueError):
    pass


class ZeroNormError(VprfError, ValueError):
    pass


class RaggedResultsError(VprfError, ValueError):
    """A sweep result set does not contain every config for every dataset."""
