"""Exception hierarchy shared by all genprint modules."""


class GenprintError(Exception):
    """Base class for every error raised by this package."""


class ZeroVectorError(GenprintError):
    """A vector with (near-)zero norm was given where a direction is required."""


class DimensionMismatchError(GenprintError):
    """Operands have incompatible lengths or shapes."""


class ShapeMismatchError(DimensionMismatchError):
    """Parameter and gradient/optimizer shapes disagree."""


class EmptyTextError(GenprintError):
    """Text sample has no characters."""


class EmptyImageError(GenprintError):
    """Image sample has zero width or height."""


class TooFewSamplesError(GenprintError):
    """Not enough samples to fit a statistic."""


class EmptyDatasetError(GenprintError):
    """A dataset split that must be nonempty is empty."""


class TooFewClassesError(GenprintError):
    """Training requires at least two classes."""


class DuplicateLabelError(GenprintError):
    """Class name already present in the store."""


class EmptyClassError(GenprintError):
    """A new class must come with at least one digest."""


class EmptyStoreError(GenprintError):
    """Query against a store with no entries."""


class FormatError(GenprintError):
    """Malformed, truncated, or wrong-version binary file."""


class LengthMismatchError(GenprintError):
    """Parallel sequences have different lengths."""


class DataError(GenprintError):
    """Malformed input records or configuration (CLI exit code 2)."""


class NumericError(GenprintError):
    """Non-finite values encountered during training (CLI exit code 3)."""
