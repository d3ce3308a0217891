"""Exception hierarchy shared across the package.

Contract violations by the caller (wrong interpolation mode, bad argument
combinations) raise plain ``ValueError``; everything data- or
transport-related gets a distinct class below so failures stay diagnosable.
"""


class TtaSegError(Exception):
    """Base class for all package-specific errors."""


class DegenerateChannelError(TtaSegError):
    """A channel's masked standard deviation is too small to normalize."""


class NiftiFormatError(TtaSegError):
    """File is not a NIfTI-1 single-file image we can read."""


class UnsupportedDtypeError(NiftiFormatError):
    """On-disk datatype code outside the supported subset."""


class TruncatedFileError(NiftiFormatError):
    """File ends before the declared voxel payload."""


class DimensionMismatchError(TtaSegError):
    """Grid dimensions (or dimension counts) are inconsistent."""


class SingularTransformError(TtaSegError):
    """Affine transform is not invertible."""


class ChannelMismatchError(TtaSegError):
    """Input channel count differs from the predictor's declared count."""


class ProbValidationError(TtaSegError):
    """Class-probability data violates the probability-map invariants."""


class ProtocolError(TtaSegError):
    """Base class for external-predictor transport failures."""


class HandshakeError(ProtocolError):
    """Child process did not present a valid hello frame."""


class ProtocolVersionError(ProtocolError):
    """Child speaks an incompatible protocol version."""


class MalformedPayloadError(ProtocolError):
    """Frame bytes could not be parsed as declared."""


class PredictorProcessError(ProtocolError):
    """External predictor process died or cannot be reached."""


class PredictorTimeoutError(ProtocolError):
    """External predictor did not answer within the request timeout."""


class RemoteModelError(ProtocolError):
    """External predictor answered with an error frame."""


class SampleFailedError(TtaSegError):
    """A Monte Carlo sample could not be evaluated; aborts the whole run.

    Attributes:
        sample_index: index of the failed sample in the run.
    """

    def __init__(self, sample_index: int, message: str):
        super().__init__(f"sample {sample_index}: {message}")
        self.sample_index = sample_index
