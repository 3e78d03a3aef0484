"""Exception hierarchy shared by every subpackage."""


class VLAError(Exception):
    """Base class for all errors raised by vlaflow."""


class ShapeError(VLAError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(VLAError, ValueError):
    """A configuration value is invalid or inconsistent."""


class NotFittedError(VLAError, AttributeError):
    """An estimator was used before ``fit``."""


class TrainingDivergedError(VLAError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step, stage, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step} (stage {stage})")
        self.step = step
        self.stage = stage
        self.loss = loss


class SamplingError(VLAError, RuntimeError):
    """The velocity field produced non-finite values during integration."""

    def __init__(self, tau):
        super().__init__(f"non-finite velocity at tau={tau:.6f}")
        self.tau = tau


class CheckpointError(VLAError, RuntimeError):
    """A checkpoint file is malformed, corrupted, or of an unknown version."""


class ExpertFailureError(VLAError, RuntimeError):
    """The scripted expert failed too often; the environment is misconfigured."""


class EpisodeDoneError(VLAError, RuntimeError):
    """``step`` was called on a finished episode."""
