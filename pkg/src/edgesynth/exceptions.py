"""Exception hierarchy shared by every edgesynth module."""


class EdgeSynthError(Exception):
    """Base class for all errors raised by edgesynth."""


class ShapeError(EdgeSynthError, ValueError):
    pass


class ConfigError(EdgeSynthError, ValueError):
    pass


class DegenerateBatchError(EdgeSynthError, ValueError):
    """Batch statistics requested over a single element per channel."""


class LabelRangeError(EdgeSynthError, ValueError):
    pass


class NumericalError(EdgeSynthError, ArithmeticError):
    """A NaN or infinite value appeared where finite values are required."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class GradientStateError(EdgeSynthError, RuntimeError):
    pass


class CodecError(EdgeSynthError, ValueError):
    pass


class UnsupportedFormat(CodecError):
    pass


class NonDivisibleError(EdgeSynthError, ValueError):
    pass


class ZeroClassError(EdgeSynthError, ValueError):
    pass


class EmptyDatasetError(EdgeSynthError, ValueError):
    pass


class SplitError(EdgeSynthError, ValueError):
    pass


class IoError(EdgeSynthError, OSError):
    pass
