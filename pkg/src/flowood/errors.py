"""Exception types shared across the package."""


class FlowOodError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FlowOodError, ValueError):
    """Array dimensions are inconsistent with what an operation requires."""


class NonFiniteError(FlowOodError, ValueError):
    """A value that must be finite is NaN or infinite."""


class FormatError(FlowOodError, ValueError):
    """A binary file (NPY array or flow model) is malformed or unsupported."""


class ValidationError(FlowOodError, ValueError):
    """Inputs violate a documented precondition (bad config, flag mismatch, ...)."""
