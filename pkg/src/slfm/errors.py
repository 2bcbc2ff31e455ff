"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class SlfmError(Exception):
    """Base class for all package errors."""


class ConfigError(SlfmError):
    """Bad configuration: unknown keys, invalid values, bad flags."""


class DataError(SlfmError):
    """Bad or inconsistent data: files, manifests, shapes."""


class NumericalError(SlfmError):
    """Numerical failure: NaN losses, degenerate inputs."""


class ShapeError(DataError):
    """Operand shapes incompatible for an operation."""

    def __init__(self, op, shape_a, shape_b=None, detail=""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b) if shape_b is not None else None
        msg = f"{op}: incompatible shape {self.shape_a}"
        if self.shape_b is not None:
            msg = f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SilentClipError(DataError):
    """No usable signal in an audio clip (RMS below threshold)."""


class GeometryError(DataError):
    """Scene geometry constraint could not be satisfied."""


class CheckpointError(DataError):
    """Checkpoint file malformed, truncated, or incompatible."""
