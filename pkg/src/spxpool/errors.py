"""Exception types shared across the package."""


class SpxError(Exception):
    """Base class for all errors raised by spxpool."""


class DimensionError(SpxError, ValueError):
    """Array sizes or grid shapes do not agree."""


class FormatError(SpxError):
    """A tensor or image file is malformed."""


class TensorTypeError(FormatError, TypeError):
    """A file holds a different tensor kind than the one requested."""


class ParameterError(SpxError, ValueError):
    """An argument is outside its valid range."""


class ConsistencyError(SpxError):
    """Cached forward state does not match the segmentation it is used with."""


class DivergenceError(SpxError, ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class ResourceError(SpxError, MemoryError):
    """A benchmark point could not be allocated."""
