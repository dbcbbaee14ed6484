"""Exception types raised across the pipeline."""


class LfsaiError(Exception):
    """Base class for all package errors."""


class SchemaError(LfsaiError, ValueError):
    """A structured text document is malformed or has invalid field values."""


class GeometryError(LfsaiError, ValueError):
    """Camera rig violates a geometric requirement (K >= 2, collinearity, ...)."""


class FrameError(LfsaiError, ValueError):
    """A light-field frame is missing files or inconsistent with its rig."""


class FormatError(LfsaiError, ValueError):
    """A binary raster file (PFM) is malformed or unsupported."""


class MeshError(LfsaiError, ValueError):
    """Support-point triangulation cannot be built for this frame."""


class CapabilityError(LfsaiError, ValueError):
    """Input exceeds a hard implementation bound (e.g. label enumeration)."""


class ParameterError(LfsaiError, ValueError):
    """A parameter is outside its documented range."""


class ConfigError(LfsaiError, ValueError):
    """Pipeline configuration is invalid (unknown key, out-of-range value)."""


class SceneError(LfsaiError, ValueError):
    """A synthetic scene description is degenerate."""
