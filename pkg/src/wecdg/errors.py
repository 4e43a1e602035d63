"""Exception types raised across the package."""


class WecdgError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ShapeMismatch(WecdgError, ValueError):
    pass


class NotScalar(WecdgError, ValueError):
    pass


class MissingGrad(WecdgError, RuntimeError):
    pass


class OddDimensions(WecdgError, ValueError):
    pass


class NonPositiveTemperature(WecdgError, ValueError):
    pass


class UnknownLabel(WecdgError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown label"


class EmptyImage(WecdgError, ValueError):
    pass


class ZeroVector(WecdgError, ValueError):
    pass


class EmptyDescriptorSet(WecdgError, ValueError):
    pass


class EmptyDataset(WecdgError, ValueError):
    pass


class UnsupportedFormat(WecdgError, ValueError):
    pass


class CorruptFile(WecdgError, ValueError):
    pass


class ImageTooSmall(WecdgError, ValueError):
    pass


class IoError(WecdgError, OSError):
    """Filesystem failure while writing datasets or checkpoints."""


class TrainingDiverged(WecdgError, FloatingPointError):
    pass
