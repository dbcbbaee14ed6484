"""Static-background disparity estimation and semantic synthetic-aperture
refocusing for calibrated linear camera arrays.

Given one synchronized multi-view frame plus per-view dynamic-object
probability masks, the estimator jointly recovers the disparity map of the
static background (including regions hidden behind dynamic objects in the
reference view) and synthesizes a refocused image with the dynamic content
removed.
"""

from .errors import (
    CapabilityError,
    ConfigError,
    FormatError,
    FrameError,
    GeometryError,
    LfsaiError,
    MeshError,
    ParameterError,
    SceneError,
    SchemaError,
)
from .estimator import StaticBackgroundEstimator
from .io import DisparityRaster, LightFieldFrame, load_frame, read_disparity_pfm, write_disparity_pfm
from .params import EstimatorParams
from .rig import Camera, CameraRig, PixelCoord, linear_rig, load_calibration, parse_calibration

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "CameraRig",
    "CapabilityError",
    "ConfigError",
    "DisparityRaster",
    "EstimatorParams",
    "FormatError",
    "FrameError",
    "GeometryError",
    "LfsaiError",
    "LightFieldFrame",
    "MeshError",
    "ParameterError",
    "PixelCoord",
    "SceneError",
    "SchemaError",
    "StaticBackgroundEstimator",
    "linear_rig",
    "load_calibration",
    "load_frame",
    "parse_calibration",
    "read_disparity_pfm",
    "write_disparity_pfm",
    "__version__",
]
