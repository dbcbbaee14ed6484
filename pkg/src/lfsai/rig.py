"""Camera models and ray geometry for a calibrated linear array.

Conventions used throughout the package:

* World frame  = frame the calibration extrinsics are expressed in. A camera
  maps a world point X to camera coordinates via ``p = R @ X + t``; the
  camera center is ``C = -R.T @ t``.
* Image frame  = (u, v) pixels, origin at the top-left, u to the right,
  v down. A camera-frame point projects to ``u = fx * x/z + cx``,
  ``v = fy * y/z + cy``.
* Disparity    = pixel shift of a scene point between the reference view
  and its unit-baseline neighbour. ``d = fx * unit_baseline / Z`` with Z the
  depth along the reference optical axis. ``d = 0`` is the plane at
  infinity, not an error. With cameras laid out toward +x of the reference
  camera, points shift toward -u in the other views; the sign falls out of
  the pinhole model and is never assumed by callers (see
  :func:`pixel_shift_ratio`).

All types are immutable after construction and all functions are pure, so
everything here is safe to share across worker processes.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import GeometryError, SchemaError

ROTATION_TOL = 1e-9
COLLINEAR_TOL = 1e-6  # meters


class PixelCoord(NamedTuple):
    """Continuous (sub-pixel) image coordinates."""

    u: float
    v: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with extrinsics ``p_cam = R @ X_world + t``.

    Raises:
        GeometryError: if the rotation is not orthonormal within 1e-9 per
            entry, focal lengths are not positive, or the principal point
            lies outside the image.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world -> camera
    translation: np.ndarray  # (3,) meters
    image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))
        if self.rotation.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {self.rotation.shape}")
        if self.translation.shape != (3,):
            raise GeometryError(
                f"translation must be a 3-vector, got {self.translation.shape}"
            )
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise GeometryError(f"rotation is not orthonormal (max |R'R - I| = {err:.3e})")
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        w, h = self.image_size
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside image {w}x{h}"
            )

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraRig:
    """K calibrated cameras on a linear array.

    The reference view is camera 0 (the leftmost); ``unit_baseline`` is the
    distance in meters between the reference camera and its nearest
    neighbour and defines the disparity unit.
    """

    cameras: tuple[Camera, ...]
    reference_index: int = 0
    unit_baseline: float = 0.0
    collinear_tol: float = COLLINEAR_TOL

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        k = len(self.cameras)
        if k < 2:
            raise GeometryError(f"a rig needs at least 2 cameras, got {k}")
        if self.reference_index != 0:
            raise GeometryError(
                f"reference_index must be 0 (leftmost view), got {self.reference_index}"
            )
        if not self.unit_baseline > 0:
            raise GeometryError(f"unit_baseline must be positive, got {self.unit_baseline}")
        sizes = {c.image_size for c in self.cameras}
        if len(sizes) != 1:
            raise GeometryError(f"cameras disagree on image size: {sorted(sizes)}")

        centers = np.stack([c.center for c in self.cameras])
        rel = centers - centers[0]
        # Perpendicular distance of every center from the best-fit array axis.
        _, svals, _ = np.linalg.svd(rel - rel.mean(axis=0), full_matrices=False)
        if svals[1] > self.collinear_tol:
            raise GeometryError(
                f"camera centers are not collinear (off-axis extent {svals[1]:.3e} m "
                f"> tolerance {self.collinear_tol:.1e} m)"
            )
        dists = np.linalg.norm(rel, axis=1)
        if np.any(np.diff(dists) <= 0):
            raise GeometryError(
                "cameras must be ordered outward from the reference view "
                f"(center distances {dists.tolist()})"
            )
        nearest = dists[1]
        if abs(nearest - self.unit_baseline) > 1e-6 * max(1.0, nearest):
            raise GeometryError(
                f"unit_baseline {self.unit_baseline} does not match the distance "
                f"{nearest:.9g} between cameras 0 and 1"
            )

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def reference(self) -> Camera:
        return self.cameras[self.reference_index]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.reference.image_size

    def relative_extrinsics(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Rotation and translation of camera k relative to the reference frame."""
        ref, cam = self.reference, self.cameras[k]
        r_rel = cam.rotation @ ref.rotation.T
        t_rel = cam.translation - r_rel @ ref.translation
        return r_rel, t_rel


def baseline_ratio(rig: CameraRig, k: int) -> float:
    """Baseline of camera k relative to the unit baseline (alpha_k, >= 0)."""
    ref_center = rig.reference.center
    return float(np.linalg.norm(rig.cameras[k].center - ref_center) / rig.unit_baseline)


def reproject_pixel(rig: CameraRig, x_ref: PixelCoord, d: float, k: int) -> PixelCoord:
    """Project a reference pixel at disparity d into camera k.

    Back-projects ``x_ref`` to the depth implied by ``d`` and reprojects with
    camera k's pinhole model. ``d = 0`` yields the vanishing-point
    projection (for rectified identity-rotation rigs, ``x_ref`` itself).
    Results may land outside the image; callers mask them.
    """
    u, v = x_ref
    us, vs = reproject_points(
        rig, np.asarray([u], dtype=np.float64), np.asarray([v], dtype=np.float64), d, k
    )
    return PixelCoord(float(us[0]), float(vs[0]))


def reproject_points(
    rig: CameraRig,
    us: np.ndarray,
    vs: np.ndarray,
    d,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`reproject_pixel`; ``d`` may be scalar or per-pixel.

    Uses inverse depth ``s = d / (fx * unit_baseline)`` so the plane at
    infinity (d = 0) needs no special case.
    """
    ref = rig.reference
    cam = rig.cameras[k]
    r_rel, t_rel = rig.relative_extrinsics(k)
    rx = (us - ref.cx) / ref.fx
    ry = (vs - ref.cy) / ref.fy
    s = np.asarray(d, dtype=np.float64) / (ref.fx * rig.unit_baseline)
    qx = r_rel[0, 0] * rx + r_rel[0, 1] * ry + r_rel[0, 2] + t_rel[0] * s
    qy = r_rel[1, 0] * rx + r_rel[1, 1] * ry + r_rel[1, 2] + t_rel[1] * s
    qz = r_rel[2, 0] * rx + r_rel[2, 1] * ry + r_rel[2, 2] + t_rel[2] * s
    return cam.fx * (qx / qz) + cam.cx, cam.fy * (qy / qz) + cam.cy


def plane_warp(rig: CameraRig, k: int, d: float) -> np.ndarray:
    """Homography induced by the fronto-parallel plane at disparity d.

    Applying the returned 3x3 matrix to homogeneous reference pixels equals
    :func:`reproject_pixel` at disparity d for every pixel. Normalized so
    H[2, 2] = 1.
    """
    ref = rig.reference
    cam = rig.cameras[k]
    r_rel, t_rel = rig.relative_extrinsics(k)
    s = d / (ref.fx * rig.unit_baseline)  # 1/Z of the plane
    k_ref_inv = np.array(
        [
            [1.0 / ref.fx, 0.0, -ref.cx / ref.fx],
            [0.0, 1.0 / ref.fy, -ref.cy / ref.fy],
            [0.0, 0.0, 1.0],
        ]
    )
    k_cam = np.array(
        [[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]]
    )
    h = k_cam @ (r_rel + np.outer(t_rel, np.array([0.0, 0.0, s]))) @ k_ref_inv
    if abs(h[2, 2]) < 1e-15:
        raise GeometryError(f"degenerate plane warp for camera {k} at d={d}")
    return h / h[2, 2]


def pixel_shift_ratio(rig: CameraRig, k: int) -> float:
    """Signed u-shift of camera k per unit disparity, measured at the principal point.

    For rectified identity-rotation rigs the warp of any pixel is exactly
    ``(u + ratio * d, v)``; matching and rendering rely on this. The sign
    encodes the array direction (negative when camera k sits toward +x of
    the reference camera). ``|ratio| == baseline_ratio(rig, k)`` for
    rectified rigs.
    """
    ref = rig.reference
    p = PixelCoord(float(ref.cx), float(ref.cy))
    u1, _ = reproject_pixel(rig, p, 1.0, k)
    u0, _ = reproject_pixel(rig, p, 0.0, k)
    return u1 - u0


def _get_field(section, name: str, conv, context: str):
    if name not in section:
        raise SchemaError(f"missing field '{name}' in [{context}]")
    raw = section[name]
    try:
        return conv(raw)
    except ValueError as exc:
        raise SchemaError(f"field '{name}' in [{context}]: {exc}") from exc


def _floats(n: int):
    def conv(raw: str) -> np.ndarray:
        vals = np.array([float(tok) for tok in raw.split()], dtype=np.float64)
        if vals.size != n:
            raise ValueError(f"expected {n} numbers, got {vals.size}")
        return vals

    return conv


CALIBRATION_FORMAT = """\
[rig]
reference_index = 0
unit_baseline = <meters>

[camera_<k>]            ; one section per camera, k = 0 .. K-1
fx = <px>
fy = <px>
cx = <px>
cy = <px>
width = <px>
height = <px>
R = <9 numbers, row-major world->camera rotation>
t = <3 numbers, meters>
"""


def parse_calibration(source: str) -> CameraRig:
    """Parse a calibration document (see :data:`CALIBRATION_FORMAT`) into a rig.

    Raises:
        SchemaError: malformed document, unknown or missing fields.
        GeometryError: valid document describing an invalid rig (K < 2,
            non-collinear centers, bad rotation, ...).
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(source)
    except configparser.Error as exc:
        raise SchemaError(f"cannot parse calibration document: {exc}") from exc

    if "rig" not in parser:
        raise SchemaError("missing [rig] section")
    rig_sec = parser["rig"]
    for key in rig_sec:
        if key not in ("reference_index", "unit_baseline"):
            raise SchemaError(f"unknown field '{key}' in [rig]")
    reference_index = _get_field(rig_sec, "reference_index", int, "rig")
    unit_baseline = _get_field(rig_sec, "unit_baseline", float, "rig")
    if reference_index != 0:
        raise SchemaError(f"field 'reference_index' in [rig] must be 0, got {reference_index}")

    cam_names = [s for s in parser.sections() if s != "rig"]
    expected = [f"camera_{k}" for k in range(len(cam_names))]
    if sorted(cam_names) != sorted(expected):
        raise SchemaError(
            f"camera sections must be camera_0 .. camera_{len(cam_names) - 1}, "
            f"got {sorted(cam_names)}"
        )

    cam_fields = ("fx", "fy", "cx", "cy", "width", "height", "R", "t")
    cameras = []
    for name in expected:
        sec = parser[name]
        for key in sec:
            if key.lower() not in [f.lower() for f in cam_fields]:
                raise SchemaError(f"unknown field '{key}' in [{name}]")
        cameras.append(
            Camera(
                fx=_get_field(sec, "fx", float, name),
                fy=_get_field(sec, "fy", float, name),
                cx=_get_field(sec, "cx", float, name),
                cy=_get_field(sec, "cy", float, name),
                rotation=_get_field(sec, "R", _floats(9), name).reshape(3, 3),
                translation=_get_field(sec, "t", _floats(3), name),
                image_size=(
                    _get_field(sec, "width", int, name),
                    _get_field(sec, "height", int, name),
                ),
            )
        )
    return CameraRig(
        cameras=tuple(cameras),
        reference_index=reference_index,
        unit_baseline=unit_baseline,
    )


def format_calibration(rig: CameraRig) -> str:
    """Serialize a rig back to the calibration text format."""
    lines = [
        "[rig]",
        f"reference_index = {rig.reference_index}",
        f"unit_baseline = {rig.unit_baseline!r}",
    ]
    for k, cam in enumerate(rig.cameras):
        lines += [
            "",
            f"[camera_{k}]",
            f"fx = {float(cam.fx)!r}",
            f"fy = {float(cam.fy)!r}",
            f"cx = {float(cam.cx)!r}",
            f"cy = {float(cam.cy)!r}",
            f"width = {int(cam.image_size[0])}",
            f"height = {int(cam.image_size[1])}",
            "R = " + " ".join(repr(float(x)) for x in cam.rotation.ravel()),
            "t = " + " ".join(repr(float(x)) for x in cam.translation),
        ]
    return "\n".join(lines) + "\n"


def load_calibration(path) -> CameraRig:
    """Read and parse a calibration file."""
    with open(path, "r", encoding="utf-8") as f:
        return parse_calibration(f.read())


def linear_rig(
    spacings,
    fx: float = 500.0,
    fy: float | None = None,
    image_size: tuple[int, int] = (640, 480),
    cx: float | None = None,
    cy: float | None = None,
) -> CameraRig:
    """Build an identity-rotation rig with cameras at the given +x offsets (meters).

    Convenience constructor used by the synthetic renderer and tests;
    ``spacings`` must start at 0 and increase.
    """
    if fy is None:
        fy = fx
    w, h = image_size
    if cx is None:
        cx = w / 2.0
    if cy is None:
        cy = h / 2.0
    cams = []
    for x in spacings:
        cams.append(
            Camera(
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                rotation=np.eye(3),
                translation=np.array([-float(x), 0.0, 0.0]),
                image_size=image_size,
            )
        )
    return CameraRig(
        cameras=tuple(cams),
        reference_index=0,
        unit_baseline=float(spacings[1] - spacings[0]),
    )
