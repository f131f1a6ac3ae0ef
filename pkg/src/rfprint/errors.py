"""Exception hierarchy shared across the pipeline.

Three rough families, used by the CLI to pick exit codes: configuration
problems (exit 2), data problems (exit 3), and I/O problems (exit 4).
"""


class PipelineError(Exception):
    """Base class for all rfprint errors."""


class InvalidArg(PipelineError, ValueError):
    """A parameter violates its documented precondition."""


class InvalidRange(InvalidArg):
    """An index range is empty, inverted, or out of bounds."""


class DomainError(PipelineError, ValueError):
    """A value left the mathematical domain of an operation (e.g. log of zero power)."""


class DegenerateSignal(PipelineError):
    """The input carries no usable structure (e.g. constant window)."""


class NoTransient(PipelineError):
    """No transient onset was found in the signal."""


class CannotDenoise(InvalidArg):
    """Requested SNR is above the signal's current SNR; noise can only be added."""


class LengthMismatch(InvalidArg):
    """Two sequences that must agree in length do not."""


class SignalTooShort(InvalidArg):
    """The signal has fewer samples than one analysis window."""


class EmptyBand(PipelineError):
    """A frequency band selection contains no bins."""


class ShapeMismatch(PipelineError):
    """Tensor shapes are inconsistent with the model architecture."""


class EmptyDataset(PipelineError):
    """An operation that needs samples received none."""


class MissingCell(PipelineError):
    """The manifest has no entries for the requested (snr, cutoff) cell."""


class IoError(PipelineError):
    """File could not be read, written, or parsed."""


class ChecksumError(IoError):
    """A binary container failed its integrity check."""


#: Error classes that indicate bad configuration rather than bad data.
CONFIG_ERRORS = (InvalidArg,)

#: Error classes that indicate unusable or inconsistent data.
DATA_ERRORS = (
    DomainError,
    DegenerateSignal,
    NoTransient,
    EmptyBand,
    ShapeMismatch,
    EmptyDataset,
    MissingCell,
)
