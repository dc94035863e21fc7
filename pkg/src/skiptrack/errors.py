"""Exception hierarchy shared by every module."""


class ShapeError(ValueError):
    """Tensor dimensions are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class DegenerateInputError(ValueError):
    """Input is valid in shape but mathematically degenerate (e.g. zero norm)."""


class WeightFileError(ValueError):
    """Base class for malformed weight/dataset containers."""


class TruncatedFileError(WeightFileError):
    pass


class BadMagicError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class DuplicateNameError(WeightFileError):
    pass


class TrailingBytesError(WeightFileError):
    pass


class FrameFormatError(ValueError):
    """Malformed frame file or frame manifest."""
