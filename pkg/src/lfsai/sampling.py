"""Raster sampling helpers shared by the likelihood, E-step and refocusing.

Nearest-neighbour sampling rounds half up (floor(x + 0.5)); every consumer
of warped coordinates must use the same rule so label lookups, descriptor
gathers and the brute-force oracle agree pixel for pixel.
"""

from __future__ import annotations

import numpy as np


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def nearest_indices(us: np.ndarray, vs: np.ndarray, shape: tuple[int, int]):
    """Nearest-pixel indices plus an in-bounds mask.

    Out-of-bounds indices are clipped so they can be used for gathering;
    the mask tells the caller which samples are real.
    """
    h, w = shape
    ui = round_half_up(us).astype(np.int64)
    vi = round_half_up(vs).astype(np.int64)
    inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    return np.clip(ui, 0, w - 1), np.clip(vi, 0, h - 1), inb


def bilinear_sample(image: np.ndarray, us: np.ndarray, vs: np.ndarray):
    """Bilinear interpolation with an in-support mask.

    Samples are defined for coordinates inside [0, W-1] x [0, H-1].
    """
    h, w = image.shape[:2]
    inb = (us >= 0.0) & (us <= w - 1.0) & (vs >= 0.0) & (vs <= h - 1.0)
    u = np.clip(us, 0.0, w - 1.0)
    v = np.clip(vs, 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    if image.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    top = image[v0, u0] * (1.0 - fu) + image[v0, u1] * fu
    bot = image[v1, u0] * (1.0 - fu) + image[v1, u1] * fu
    return top * (1.0 - fv) + bot * fv, inb
