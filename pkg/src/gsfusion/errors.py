"""Exception types shared across the package."""


class GsFusionError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(GsFusionError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class InvalidFieldError(GsFusionError, ValueError):
    """A Gaussian field violates a structural invariant (labels, shapes)."""


class FormatError(GsFusionError, ValueError):
    """A serialized file does not match its declared layout.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(GsFusionError, ValueError):
    """A serialized file has an unsupported format version."""


class ShapeError(GsFusionError, ValueError):
    """Array arguments have incompatible shapes."""


class InvalidLabelError(GsFusionError, ValueError):
    """A mask or field label is outside the configured class range."""


class InvalidTransformError(GsFusionError, ValueError):
    """A transform map references a label the field cannot contain."""


class InvalidPoseError(GsFusionError, ValueError):
    """Pose sets disagree about which objects exist."""


class RenderError(GsFusionError, ValueError):
    """The rasterizer received a field it cannot render."""


class StateError(GsFusionError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward without
    retained intermediates)."""


class PlacementInfeasibleError(GsFusionError, RuntimeError):
    """Pseudo-state placement could not satisfy its constraints."""


class DivergenceError(GsFusionError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
