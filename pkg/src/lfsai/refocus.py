"""Semantic synthetic-aperture refocusing of the static background.

Static reference pixels already show the background, so they are copied
through verbatim. Each dynamic reference pixel is warped into every view at
its estimated disparity; rays landing in bounds on static-labeled pixels
are averaged (bilinear intensity, nearest-neighbour labels - labels are
categorical and must not be interpolated). Pixels reached by no static ray
are gaps: they are reported in the gap mask and filled with the nearest
non-gap value along the row so the output image stays usable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .io import DisparityRaster, LightFieldFrame
from .rig import CameraRig, reproject_points
from .sampling import bilinear_sample, nearest_indices
from .segmentation import LabelMap


@dataclass
class RefocusResult:
    """Refocused intensity raster plus per-pixel bookkeeping.

    ``coverage`` counts the static rays averaged into each pixel (1 at
    pass-through pixels by convention, marked in ``passthrough``);
    ``gap_mask`` flags pixels with zero static rays or invalid disparity.
    """

    image: np.ndarray
    coverage: np.ndarray
    gap_mask: np.ndarray
    passthrough: np.ndarray


def synthesize_refocused(
    frame: LightFieldFrame,
    labels: Sequence[LabelMap],
    rig: CameraRig,
    disparity: DisparityRaster,
    use_color: bool = False,
) -> RefocusResult:
    """Average static rays at each dynamic reference pixel (see module doc).

    With ``use_color=True`` and color planes present, intensities are
    averaged per channel; labels, coverage and gaps are identical to the
    grayscale path.
    """
    h, w = frame.shape
    ref_index = rig.reference_index
    if use_color and frame.color_images is not None:
        planes = frame.color_images
        out = planes[ref_index].copy()
    else:
        use_color = False
        planes = frame.images
        out = planes[ref_index].copy()

    dynamic_ref = labels[ref_index].dynamic
    passthrough = ~dynamic_ref
    coverage = np.zeros((h, w), dtype=np.int64)
    coverage[passthrough] = 1

    targets = np.flatnonzero(dynamic_ref.ravel())
    gap_mask = np.zeros((h, w), dtype=bool)
    if targets.size:
        vs0, us0 = np.divmod(targets, w)
        us = us0.astype(np.float64)
        vs = vs0.astype(np.float64)
        ds = disparity.values.ravel()[targets].astype(np.float64)
        has_d = disparity.valid.ravel()[targets]

        acc = np.zeros((targets.size, 3) if use_color else targets.size)
        count = np.zeros(targets.size)
        for k in range(len(rig)):
            wu, wv = reproject_points(rig, us, vs, np.where(has_d, ds, 0.0), k)
            ui, vi, inb = nearest_indices(wu, wv, (h, w))
            static_hit = inb & ~labels[k].dynamic[vi, ui]
            vals, support = bilinear_sample(planes[k], wu, wv)
            ok = has_d & static_hit & support
            wgt = ok.astype(np.float64)
            acc += vals * (wgt[:, None] if use_color else wgt)
            count += wgt
        got = count > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = acc / (count[:, None] if use_color else count)
        vals_img = out.reshape(-1, 3) if use_color else out.ravel()
        vals_img[targets[got]] = mean[got]
        coverage.ravel()[targets] = count.astype(np.int64)
        gap_flat = np.zeros(h * w, dtype=bool)
        gap_flat[targets[~got]] = True
        gap_mask = gap_flat.reshape(h, w)

    if gap_mask.any():
        out = _fill_row_nearest(out, gap_mask)
    return RefocusResult(image=out, coverage=coverage, gap_mask=gap_mask, passthrough=passthrough)


def _fill_row_nearest(image: np.ndarray, gaps: np.ndarray) -> np.ndarray:
    """Replace gap pixels by the nearest non-gap value in their row.

    Rows that are entirely gaps fall back to the nearest non-gap row of the
    same column; pixels with no donor anywhere keep their value.
    """
    out = image.copy()
    h, w = gaps.shape
    empty_rows = []
    for v in range(h):
        good = np.flatnonzero(~gaps[v])
        if good.size == 0:
            empty_rows.append(v)
            continue
        holes = np.flatnonzero(gaps[v])
        if holes.size == 0:
            continue
        pos = np.searchsorted(good, holes)
        left = good[np.clip(pos - 1, 0, good.size - 1)]
        right = good[np.clip(pos, 0, good.size - 1)]
        # Nearest donor; equidistant prefers the left one.
        use_right = (pos == 0) | ((pos < good.size) & (right - holes < holes - left))
        donor = np.where(use_right, right, left)
        out[v, holes] = image[v, donor]
    good_rows = np.flatnonzero(~gaps.all(axis=1))
    for v in empty_rows:
        if good_rows.size == 0:
            break
        pos = int(np.searchsorted(good_rows, v))
        cands = []
        if pos > 0:
            cands.append(int(good_rows[pos - 1]))
        if pos < good_rows.size:
            cands.append(int(good_rows[pos]))
        donor_row = min(cands, key=lambda r: abs(r - v))
        out[v] = out[donor_row]
    return out


def coverage_to_u8(coverage: np.ndarray, n_views: int) -> np.ndarray:
    """Coverage raster scaled to 8 bits: 255 * static_ray_count / K."""
    return np.floor(255.0 * coverage / float(n_views) + 0.5).astype(np.uint8)
