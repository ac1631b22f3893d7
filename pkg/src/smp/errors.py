"""Exception types raised across the package."""


class SmpError(Exception):
    """Base class for every error raised by this package."""


class ParseError(SmpError):
    """A morphology, config or checkpoint document is malformed."""


class ValidationError(SmpError):
    """A document parsed but describes an invalid object (cycle, orphan, bad range)."""


class UnknownLimb(SmpError, KeyError):
    pass


class EmptyVariantSet(SmpError):
    pass


class NonFiniteState(SmpError):
    """Simulation diverged; the episode has to be truncated."""


class ShapeMismatch(SmpError, ValueError):
    pass


class NonScalarLoss(SmpError, ValueError):
    pass


class TapeConsumed(SmpError, RuntimeError):
    pass


class MissingGradient(SmpError):
    pass


class DimensionMismatch(SmpError, ValueError):
    pass


class TooManyChildren(SmpError, ValueError):
    pass


class BufferTooSmall(SmpError):
    pass


class BranchingExceedsCmax(SmpError):
    pass


class UnregisteredEnv(SmpError, KeyError):
    pass


class SchemeMismatch(SmpError):
    pass


class DegenerateData(SmpError, ValueError):
    pass
