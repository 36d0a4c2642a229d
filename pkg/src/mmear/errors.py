"""Exception types shared across the package."""


class MmearError(Exception):
    """Base class for all package errors."""


class ShapeError(MmearError, ValueError):
    """Array shape or dimension mismatch."""


class StateError(MmearError, RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class ConfigError(MmearError, ValueError):
    """Invalid configuration value or combination."""


class DataError(MmearError, ValueError):
    """Invalid or inconsistent dataset content."""


class ParseError(DataError):
    """Malformed input file."""


class PoseError(MmearError, ValueError):
    """Base class for hand-pose errors."""


class InvalidPoseError(PoseError):
    """Non-finite or otherwise unusable keypoints."""


class DegeneratePoseError(PoseError):
    """Pose geometry does not admit the requested operation."""


class MetricError(MmearError, ValueError):
    """Invalid metric input."""


class DivergenceError(MmearError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, lr: float):
        self.epoch = epoch
        self.lr = lr
        super().__init__(f"non-finite loss at epoch {epoch} (lr={lr})")


class MeasurementError(MmearError, RuntimeError):
    """CPU measurement contract violated."""
