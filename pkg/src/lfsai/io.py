"""Frame loading and bit-exact raster I/O.

Dataset layout on disk::

    <dataset>/calib.txt                 calibration document (rig.py format)
    <dataset>/<frame_id>/cam_<k>.png    intensity image for view k
    <dataset>/<frame_id>/mask_<k>.png   P(dynamic) for view k, value/255

Pipeline outputs per frame: ``disparity.pfm`` (invalid = -1), ``refocused.png``,
``coverage.png`` (255 * static_ray_count / K) and ``labels_<k>.png``
(0 = static, 255 = dynamic).

The estimator runs on grayscale; color PNGs are converted with the Rec. 601
luma weights at load time. The original color planes are kept so refocusing
can optionally be run per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, FrameError
from .rig import CameraRig

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LightFieldFrame:
    """One synchronized capture: K intensity images + K dynamic-probability maps.

    ``images`` are normalized floats in [0, 1]; ``prob_masks`` hold
    P(pixel is dynamic) in [0, 1]. ``color_images`` is populated only when
    the source PNGs carried RGB data.
    """

    images: tuple[np.ndarray, ...]
    prob_masks: tuple[np.ndarray, ...]
    rig: CameraRig
    frame_id: int = 0
    color_images: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        w, h = self.rig.image_size
        if len(self.images) != len(self.rig) or len(self.prob_masks) != len(self.rig):
            raise FrameError(
                f"expected {len(self.rig)} images and masks, got "
                f"{len(self.images)} images / {len(self.prob_masks)} masks"
            )
        for k, (img, mask) in enumerate(zip(self.images, self.prob_masks)):
            if img.shape != (h, w):
                raise FrameError(
                    f"view {k}: image shape {img.shape} does not match rig size {(h, w)}"
                )
            if mask.shape != (h, w):
                raise FrameError(
                    f"view {k}: mask shape {mask.shape} does not match rig size {(h, w)}"
                )
            if mask.min() < 0.0 or mask.max() > 1.0:
                raise FrameError(f"view {k}: mask values outside [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.images[0].shape


@dataclass
class DisparityRaster:
    """Per-pixel float32 disparity with validity flags.

    Invalid pixels carry -inf in ``values``; on disk they are stored as -1.
    """

    values: np.ndarray
    valid: np.ndarray

    @classmethod
    def full_invalid(cls, shape: tuple[int, int]) -> "DisparityRaster":
        return cls(
            values=np.full(shape, -np.inf, dtype=np.float32),
            valid=np.zeros(shape, dtype=bool),
        )

    @classmethod
    def from_values(cls, values: np.ndarray, valid: np.ndarray) -> "DisparityRaster":
        out = np.where(valid, values, -np.inf).astype(np.float32)
        return cls(values=out, valid=valid.astype(bool).copy())

    def copy(self) -> "DisparityRaster":
        return DisparityRaster(self.values.copy(), self.valid.copy())


def read_image_gray(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a PNG as normalized grayscale floats; also return RGB floats if present."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
            return arr / 255.0, None
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    gray = LUMA_WEIGHTS[0] * rgb[..., 0] + LUMA_WEIGHTS[1] * rgb[..., 1] + LUMA_WEIGHTS[2] * rgb[..., 2]
    return gray, rgb


def write_image_gray(arr: np.ndarray, path) -> None:
    """Write [0, 1] floats as 8-bit grayscale PNG, rounding half up."""
    data = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def write_image_u8(data: np.ndarray, path) -> None:
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data.astype(np.uint8), mode=mode).save(path)


def load_frame(directory, rig: CameraRig, frame_id: int | None = None) -> LightFieldFrame:
    """Load ``cam_<k>.png`` / ``mask_<k>.png`` for k = 0..K-1 from a frame directory.

    Raises:
        FrameError: a file is missing (named in the message) or a raster's
            dimensions disagree with the rig.
    """
    directory = Path(directory)
    if frame_id is None:
        try:
            frame_id = int(directory.name)
        except ValueError:
            frame_id = 0
    images, masks, colors = [], [], []
    w, h = rig.image_size
    for k in range(len(rig)):
        for stem in (f"cam_{k}.png", f"mask_{k}.png"):
            if not (directory / stem).exists():
                raise FrameError(f"missing file '{stem}' in {directory}")
        gray, rgb = read_image_gray(directory / f"cam_{k}.png")
        if gray.shape != (h, w):
            raise FrameError(
                f"cam_{k}.png: expected {w}x{h}, found {gray.shape[1]}x{gray.shape[0]}"
            )
        mask, _ = read_image_gray(directory / f"mask_{k}.png")
        if mask.shape != (h, w):
            raise FrameError(
                f"mask_{k}.png: expected {w}x{h}, found {mask.shape[1]}x{mask.shape[0]}"
            )
        images.append(gray)
        masks.append(mask)
        colors.append(rgb)
    color_images = tuple(colors) if all(c is not None for c in colors) else None
    return LightFieldFrame(
        images=tuple(images),
        prob_masks=tuple(masks),
        rig=rig,
        frame_id=frame_id,
        color_images=color_images,
    )


INVALID_ON_DISK = -1.0


def write_disparity_pfm(raster: DisparityRaster, path) -> None:
    """Write a grayscale PFM ("Pf", little-endian, bottom-to-top rows).

    Invalid pixels are stored as -1.0.
    """
    data = np.where(raster.valid, raster.values, INVALID_ON_DISK).astype("<f4")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data[::-1].tobytes())


def read_disparity_pfm(path) -> DisparityRaster:
    """Exact inverse of :func:`write_disparity_pfm`.

    Raises:
        FormatError: malformed header, big-endian scale, truncated payload,
            or NaN samples.
    """
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise FormatError(f"not a grayscale PFM file (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"malformed PFM dimension line {dims!r}")
        try:
            w, h = int(dims[0]), int(dims[1])
        except ValueError as exc:
            raise FormatError(f"malformed PFM dimensions {dims!r}") from exc
        if w <= 0 or h <= 0:
            raise FormatError(f"invalid PFM dimensions {w}x{h}")
        try:
            scale = float(f.readline().strip())
        except ValueError as exc:
            raise FormatError("malformed PFM scale line") from exc
        if scale >= 0:
            raise FormatError("big-endian PFM (positive scale) is not supported")
        payload = f.read(w * h * 4)
    if len(payload) != w * h * 4:
        raise FormatError(f"truncated PFM payload ({len(payload)} of {w * h * 4} bytes)")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w)[::-1].copy()
    if np.isnan(data).any():
        raise FormatError("PFM contains NaN samples")
    valid = data != INVALID_ON_DISK
    return DisparityRaster.from_values(data, valid)


@dataclass
class FrameArtifacts:
    """Paths of everything the pipeline writes for one frame."""

    directory: Path
    disparity: Path = field(init=False)
    refocused: Path = field(init=False)
    coverage: Path = field(init=False)

    def __post_init__(self):
        self.directory = Path(self.directory)
        self.disparity = self.directory / "disparity.pfm"
        self.refocused = self.directory / "refocused.png"
        self.coverage = self.directory / "coverage.png"

    def labels(self, k: int) -> Path:
        return self.directory / f"labels_{k}.png"
