"""Exception hierarchy shared by every stage of the pipeline."""


class CollabSegError(Exception):
    """Base class for all package errors."""


class DimensionError(CollabSegError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class UsageError(CollabSegError, ValueError):
    """An API was called in a way its contract forbids."""


class MetaImageFormatError(CollabSegError, ValueError):
    """A MetaImage header is missing keys or contradicts itself."""


class TruncationError(MetaImageFormatError):
    """The raw payload size does not match the header."""


class PhantomSpecError(CollabSegError, ValueError):
    """A phantom specification is degenerate or geometrically impossible."""


class PairingError(CollabSegError, ValueError):
    """Two label sets that must cover the same slices do not."""


class UndefinedMetricError(CollabSegError, ValueError):
    """A metric is undefined for the given masks (e.g. empty reference)."""


class ConfigError(CollabSegError, ValueError):
    """An experiment configuration violates its invariants."""


class PrerequisiteError(CollabSegError, RuntimeError):
    """An upstream stage artifact is missing."""

    def __init__(self, message, command=None):
        super().__init__(message)
        self.command = command


class NumericError(CollabSegError, FloatingPointError):
    """A NaN or infinite value appeared during training."""
