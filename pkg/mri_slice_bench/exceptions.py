class SliceBenchError(Exception):
    """Base exception for all mri-slice-bench errors."""


class ValidationError(SliceBenchError):
    """Raised when user input, configuration or a type invariant is invalid."""


class NiftiError(SliceBenchError):
    """Raised when a NIfTI-1 byte stream cannot be parsed or written."""


class TooShortError(NiftiError):
    """Fewer than 348 header bytes available."""


class BadMagicError(NiftiError):
    """Magic is neither 'n+1' nor 'ni1'."""


class BadSizeError(NiftiError):
    """Neither sizeof_hdr nor its byte swap equals 348."""


class UnsupportedDatatypeError(NiftiError):
    """Datatype code outside the supported set."""


class InvalidHeaderError(NiftiError):
    """Header fields violate dim/bitpix/vox_offset invariants."""


class TruncatedDataError(NiftiError):
    """Voxel block shorter than the header promises."""


class ValueOverflowError(NiftiError):
    """Voxel value not representable in the requested integer datatype."""


class CompressedInputError(NiftiError):
    """Input is gzip-compressed (.nii.gz is not supported)."""


class PipelineError(SliceBenchError):
    """Raised when the preprocessing pipeline cannot produce output."""


class AllClippedError(PipelineError):
    """No slice survived the clip policy."""


class ModelError(SliceBenchError):
    """Raised on classifier training or inference failures."""


class DimensionMismatchError(ModelError):
    """Feature vector length differs from the training dimension."""


class ShapeMismatchError(ModelError):
    """Image shape differs from the network's configured input."""


class NonFiniteLossError(ModelError):
    """Training diverged; carries the last good epoch and its history."""

    def __init__(self, message: str, last_good_epoch: int, history: list | None = None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.history = history or []


class MetricsError(SliceBenchError):
    """Raised when metrics cannot be computed from the given inputs."""


class LengthMismatchError(MetricsError):
    """Truth and prediction sequences differ in length."""


class EmptyInputError(MetricsError):
    """No predictions to score."""


class NonPositiveBaselineError(MetricsError):
    """Percentage decrease requested against a baseline <= 0."""


class OutputError(SliceBenchError):
    """Raised when writing output files fails."""


class MalformedCsvError(SliceBenchError):
    """Raised when an input CSV lacks required columns or values."""


class NoInputError(SliceBenchError):
    """Raised when an input directory holds no usable volumes or slices."""
