"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An architecture or run configuration that cannot work (bad sizes, K mismatch...)."""


class DatasetError(RuntimeError):
    """Base class for dataset file problems."""


class DatasetVersionError(DatasetError):
    """Unrecognised magic string or unsupported format version."""


class DatasetTruncatedError(DatasetError):
    """File shorter than the record count announced in the header."""


class DatasetChecksumError(DatasetError):
    """A record's stored CRC32 does not match its payload."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint file problems."""


class CheckpointShapeError(CheckpointError):
    """Checkpoint tensors incompatible with the current architecture."""

    def __init__(self, mismatches):
        self.mismatches = list(mismatches)
        super().__init__(
            "checkpoint incompatible with model architecture: "
            + "; ".join(self.mismatches)
        )


class GradientNaNError(RuntimeError):
    """Non-finite gradient encountered; names the offending tensor."""

    def __init__(self, tensor_name):
        self.tensor_name = tensor_name
        super().__init__(f"non-finite gradient in tensor '{tensor_name}'")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training; records the step index."""

    def __init__(self, step, message=""):
        self.step = step
        super().__init__(f"non-finite loss at step {step}" + (f": {message}" if message else ""))


class AblationOrderingError(AssertionError):
    """The requested ordering of ablation conditions does not hold."""
