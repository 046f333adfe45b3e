"""Exception hierarchy shared across the package."""


class SensoptError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SensoptError):
    """Operands have incompatible or invalid dimensions."""


class NonFiniteError(SensoptError):
    """A NaN or Inf showed up where only finite values are allowed."""


class CheckpointError(SensoptError):
    """Base class for checkpoint / binary dump problems."""


class BadMagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(CheckpointError):
    """File declares a format version this build cannot read."""


class TruncatedFileError(CheckpointError):
    """File ended before the declared payload was complete."""


class ManifestError(SensoptError):
    """Problem with a dataset manifest directory."""


class MissingFileError(ManifestError):
    """A manifest row references an image file that does not exist."""


class LabelError(ManifestError):
    """A manifest label is inconsistent with the declared class set."""


class TrainingDivergedError(SensoptError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class AscentDivergedError(SensoptError):
    """Objective value became non-finite during synthesis."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"objective diverged at step {step}")


class FromImageUnsupportedError(SensoptError):
    """Parameterization has no faithful inverse from a target image."""


class ProjectionUnsupportedError(SensoptError):
    """Parameterization cannot be projected in image space."""


class ConfigError(SensoptError):
    """Run configuration failed validation."""
