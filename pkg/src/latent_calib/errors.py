"""Exception types shared across the package."""


class LatentCalibError(Exception):
    """Base class for all package-specific errors."""


class NumericalError(LatentCalibError):
    """A NaN/Inf appeared in activations, losses or gradients."""


class CheckpointFormatError(LatentCalibError):
    """A parameter checkpoint file is malformed or of an unknown version."""


class ZeroVarianceError(LatentCalibError):
    """A channel has zero variance and cannot be standardized."""


class VarianceCollapseError(LatentCalibError):
    """Predictive spread collapsed to the floor for most of a batch."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss."""


class MissingArtifactError(LatentCalibError):
    """A report or experiment is missing required input files."""

    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        super().__init__(
            "missing required artifacts: " + ", ".join(self.missing)
        )


class SweepAbortedError(LatentCalibError):
    """A keep-rate sweep member failed; partial results are attached."""

    def __init__(self, message: str, partial):
        self.partial = partial
        super().__init__(message)
