"""Exception types shared across the package."""


class EgolabelError(Exception):
    """Base class for all egolabel errors."""


class BehindCamera(EgolabelError):
    """A point lies at or behind the pinhole camera plane."""


class OutsideFieldOfView(EgolabelError):
    """A point or pixel falls outside the fisheye field of view."""


class DegenerateConfiguration(EgolabelError):
    """Point configuration too degenerate (collinear/coplanar/coincident)."""


class InsufficientPoints(EgolabelError):
    """Fewer usable correspondences than the solver requires."""


class DegenerateBone(EgolabelError):
    """A bone is too short to define a direction."""


class InsufficientData(EgolabelError):
    """Not enough training samples to fit the requested model."""


class DimensionMismatch(EgolabelError):
    """Latent vector or pose window has an unexpected dimension."""


class ShapeMismatch(EgolabelError):
    """Tensor arguments disagree in shape."""


class SequenceTooShort(EgolabelError):
    """Dataset has fewer frames than one optimization window."""


class InitializationFailure(EgolabelError):
    """No frame of a window could be initialized (e.g. all PnP solves failed)."""


class SchemaError(EgolabelError):
    """A file does not conform to its expected schema."""
