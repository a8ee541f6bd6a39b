"""Exception types shared across the package."""


class CgcdError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CgcdError):
    """Operands have incompatible or unsupported shapes."""


class NonFiniteError(CgcdError):
    """An operation produced or received NaN/Inf entries."""


class DegenerateInputError(CgcdError):
    """Input is numerically degenerate (e.g. a near-zero row fed to row normalization)."""


class GradientStateError(CgcdError):
    """Backward called on a non-scalar root, or twice on the same graph without reset."""


class ValidationError(CgcdError):
    """A config or argument failed validation before any work started."""


class CapacityError(CgcdError):
    """A sampling request asked for more samples/classes than are available."""


class DatasetFormatError(CgcdError):
    """Base class for dataset-file parsing problems."""


class DatasetVersionError(DatasetFormatError):
    """Dataset file declares an unsupported format version."""


class DatasetHeaderError(DatasetFormatError):
    """Dataset file header is malformed."""


class DatasetTruncatedError(DatasetFormatError):
    """Dataset payload ends before the declared number of rows."""
