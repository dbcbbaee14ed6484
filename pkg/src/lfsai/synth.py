"""Deterministic synthetic light fields with exact ground truth.

Scenes are fronto-parallel textured planes plus rectangular occluders in
front of them. Each plane's texture is a raster over an extended horizontal
domain; view k samples it at ``u - rho_k * d`` (the reference-view
coordinate of the pixel's scene point), so parallax is exact by
construction and the multi-view images are mutually consistent to the
sampling mode (nearest by default, which keeps oracle comparisons exact).

All randomness flows from explicit seeds; rendering the same spec twice is
bit-identical.

This module also hosts the deliberately naive exhaustive MAP search used as
the independence oracle for the estimator. It walks pixels and candidates
in plain Python, re-deriving inclusion, variance and the argmin from the
documented rules, sharing only the ray geometry helpers with the estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import SceneError
from .io import (
    DisparityRaster,
    LightFieldFrame,
    write_disparity_pfm,
    write_image_gray,
)
from .params import EstimatorParams
from .rig import CameraRig, format_calibration, linear_rig, pixel_shift_ratio
from .support import PriorDistribution

TEXTURE_KINDS = ("noise", "checker", "gradient")


@dataclass(frozen=True)
class PlaneSpec:
    """Textured background plane; ``region`` (u0, v0, u1, v1) is its footprint
    in reference-view coordinates, full-frame when None."""

    depth: float
    seed: int = 0
    kind: str = "noise"
    scale: int = 6
    region: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class OccluderSpec:
    """Rectangular dynamic object in front of the background.

    ``mask_pad`` grows the dynamic-probability footprint beyond the drawn
    rectangle by that many pixels on every side, mimicking segmentation
    masks that cover objects with a safety fringe.
    """

    depth: float
    region: tuple[int, int, int, int]  # (u0, v0, u1, v1) in the reference view
    prob: float = 1.0
    seed: int = 100
    scale: int = 5
    mask_pad: int = 0


@dataclass(frozen=True)
class SceneSpec:
    background: tuple[PlaneSpec, ...]
    occluders: tuple[OccluderSpec, ...]
    rig: CameraRig
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "background", tuple(self.background))
        object.__setattr__(self, "occluders", tuple(self.occluders))
        if not self.background:
            raise SceneError("scene needs at least one background plane")
        for p in self.background:
            if p.depth <= 0:
                raise SceneError(f"plane depth must be positive, got {p.depth}")
            if p.kind not in TEXTURE_KINDS:
                raise SceneError(f"unknown texture kind {p.kind!r}")
        min_bg = min(p.depth for p in self.background)
        for o in self.occluders:
            if o.depth <= 0:
                raise SceneError(f"occluder depth must be positive, got {o.depth}")
            if o.depth >= min_bg:
                raise SceneError(
                    f"occluder at {o.depth} m must be in front of the background ({min_bg} m)"
                )
            if not 0.0 <= o.prob <= 1.0:
                raise SceneError(f"occluder probability must lie in [0, 1], got {o.prob}")


@dataclass
class GroundTruth:
    """Exact per-frame truth: static-background disparity in the reference
    view, the clean background image, and per-view occluder footprints."""

    disparity: DisparityRaster
    background: np.ndarray
    masks: list[np.ndarray]  # per-view boolean occluder footprints


def _quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid (half-up) so PNG round-trips are lossless."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def _texture_raster(kind: str, seed, scale: int, x0: int, x1: int, height: int) -> np.ndarray:
    """Texture values on integer coordinates x in [x0, x1], y in [0, height)."""
    width = x1 - x0 + 1
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if kind == "gradient":
        col = 0.2 + 0.6 * ys / max(height - 1, 1)
        return _quantize(np.repeat(col[:, None], width, axis=1))
    if kind == "checker":
        ci = np.floor(xs / scale).astype(np.int64) - math.floor(x0 / scale)
        cj = np.floor(ys / scale).astype(np.int64)
        n_i = int(ci.max()) + 1
        n_j = int(cj.max()) + 1
        jitter = rng.uniform(-0.15, 0.15, size=(n_j, n_i))
        base = np.where((ci[None, :] + cj[:, None]) % 2 == 0, 0.3, 0.7)
        return _quantize(base + jitter[cj][:, ci])
    # value noise: bilinear interpolation of a coarse random lattice
    gx = (xs - x0) / scale
    gy = ys / scale
    lat = rng.uniform(0.05, 0.95, size=(int(np.floor(gy.max())) + 2, int(np.floor(gx.max())) + 2))
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    fx = gx - ix
    fy = (gy - iy)[:, None]
    top = lat[iy][:, ix] * (1 - fx) + lat[iy][:, ix + 1] * fx
    bot = lat[iy + 1][:, ix] * (1 - fx) + lat[iy + 1][:, ix + 1] * fx
    return _quantize(top * (1 - fy) + bot * fy)


def _disparity_of(rig: CameraRig, depth: float) -> float:
    return rig.reference.fx * rig.unit_baseline / depth


@dataclass
class _Layer:
    d: float
    region: tuple[int, int, int, int] | None
    tex: np.ndarray
    x0: int


def render_lightfield(
    spec: SceneSpec, seed: int = 0, sampling: str = "nearest"
) -> tuple[LightFieldFrame, GroundTruth]:
    """Render every view of the scene plus exact ground truth.

    ``sampling`` is "nearest" (default; exact for integer parallax) or
    "bilinear".
    """
    rig = spec.rig
    w, h = rig.image_size
    rhos = [pixel_shift_ratio(rig, k) for k in range(len(rig))]

    layers: list[_Layer] = []
    all_d = [_disparity_of(rig, p.depth) for p in spec.background] + [
        _disparity_of(rig, o.depth) for o in spec.occluders
    ]
    shift_lo = min(0.0, min(-r * d for r in rhos for d in all_d))
    shift_hi = max(0.0, max(-r * d for r in rhos for d in all_d))
    x0 = int(math.floor(shift_lo)) - 1
    x1 = int(math.ceil(w - 1 + shift_hi)) + 1

    bg_sorted = sorted(spec.background, key=lambda p: p.depth)
    for i, plane in enumerate(bg_sorted):
        layers.append(
            _Layer(
                d=_disparity_of(rig, plane.depth),
                region=plane.region,
                tex=_texture_raster(plane.kind, [seed, 17, plane.seed, i], plane.scale, x0, x1, h),
                x0=x0,
            )
        )
    occ_sorted = sorted(spec.occluders, key=lambda o: o.depth)
    occ_layers = [
        _Layer(
            d=_disparity_of(rig, occ.depth),
            region=occ.region,
            tex=_texture_raster("noise", [seed, 31, occ.seed, i], occ.scale, x0, x1, h),
            x0=x0,
        )
        for i, occ in enumerate(occ_sorted)
    ]

    uu = np.arange(w, dtype=np.float64)
    vv = np.arange(h, dtype=np.int64)

    def sample_layer(layer: _Layer, rho: float) -> tuple[np.ndarray, np.ndarray]:
        """Layer intensity per pixel of one view and its coverage mask."""
        xref = uu - rho * layer.d  # reference-view coordinate of each column
        if layer.region is None:
            cover_u = np.ones(w, dtype=bool)
            cover = np.ones((h, w), dtype=bool)
        else:
            u0, v0, u1, v1 = layer.region
            cover_u = (xref >= u0) & (xref < u1)
            cover = np.zeros((h, w), dtype=bool)
            cover[max(v0, 0) : max(v1, 0), :] = cover_u[None, :]
        if sampling == "nearest":
            xi = np.floor(xref + 0.5).astype(np.int64) - layer.x0
            xi = np.clip(xi, 0, layer.tex.shape[1] - 1)
            vals = layer.tex[:, xi]
        else:
            xf = np.clip(xref - layer.x0, 0.0, layer.tex.shape[1] - 1.0)
            lo = np.floor(xf).astype(np.int64)
            hi = np.minimum(lo + 1, layer.tex.shape[1] - 1)
            f = xf - lo
            vals = layer.tex[:, lo] * (1 - f) + layer.tex[:, hi] * f
        return vals, cover

    images, probs, gt_masks = [], [], []
    for k in range(len(rig)):
        rho = rhos[k]
        img = np.zeros((h, w))
        assigned = np.zeros((h, w), dtype=bool)
        for layer in layers:  # nearest background first
            vals, cover = sample_layer(layer, rho)
            put = cover & ~assigned
            img[put] = vals[put]
            assigned |= cover
        prob = np.zeros((h, w))
        occ_mask = np.zeros((h, w), dtype=bool)
        for layer, occ in list(zip(occ_layers, occ_sorted))[::-1]:  # nearest drawn last
            vals, cover = sample_layer(layer, rho)
            img[cover] = vals[cover]
            if occ.mask_pad > 0:
                u0, v0, u1, v1 = occ.region
                p = occ.mask_pad
                padded_layer = _Layer(layer.d, (u0 - p, v0 - p, u1 + p, v1 + p), layer.tex, layer.x0)
                _, cover = sample_layer(padded_layer, rho)
            prob[cover] = occ.prob
            occ_mask |= cover
        if spec.noise_sigma > 0:
            noise_rng = np.random.default_rng([seed, 997, k])
            img = img + noise_rng.normal(0.0, spec.noise_sigma, size=img.shape)
        images.append(_quantize(img))
        probs.append(_quantize(prob))
        gt_masks.append(occ_mask)

    # Ground truth in the reference view: front-most background plane.
    gt_vals = np.zeros((h, w), dtype=np.float32)
    gt_valid = np.zeros((h, w), dtype=bool)
    bg_img = np.zeros((h, w))
    for layer in layers:
        vals, cover = sample_layer(layer, rhos[rig.reference_index])
        put = cover & ~gt_valid
        gt_vals[put] = layer.d
        bg_img[put] = vals[put]
        gt_valid |= cover

    frame = LightFieldFrame(
        images=tuple(images), prob_masks=tuple(probs), rig=rig, frame_id=seed
    )
    gt = GroundTruth(
        disparity=DisparityRaster.from_values(gt_vals, gt_valid),
        background=_quantize(bg_img),
        masks=gt_masks,
    )
    return frame, gt


def brute_force_disparity_oracle(
    frame: LightFieldFrame,
    labels,
    rig: CameraRig,
    candidates_per_pixel: Sequence[PriorDistribution],
    params: EstimatorParams,
    descriptors=None,
) -> DisparityRaster:
    """Exhaustive per-pixel MAP search, independently coded, tests only.

    ``candidates_per_pixel`` holds one prior per reference pixel in
    row-major order. Evaluation order is ascending disparity with a
    strict-less update, the shared smallest-d tie-break.
    """
    from .support import VARIANT_LIKELIHOOD, sobel_descriptor_field

    h, w = frame.shape
    if descriptors is None:
        descriptors = [sobel_descriptor_field(img, VARIANT_LIKELIHOOD) for img in frame.images]
    n_views = len(rig)
    extr = [rig.relative_extrinsics(k) for k in range(n_views)]
    ref = rig.reference
    focal_baseline = ref.fx * rig.unit_baseline

    def warp(u, v, d, k):
        r, t = extr[k]
        rx = (u - ref.cx) / ref.fx
        ry = (v - ref.cy) / ref.fy
        s = d / focal_baseline
        qx = r[0, 0] * rx + r[0, 1] * ry + r[0, 2] + t[0] * s
        qy = r[1, 0] * rx + r[1, 1] * ry + r[1, 2] + t[1] * s
        qz = r[2, 0] * rx + r[2, 1] * ry + r[2, 2] + t[2] * s
        cam = rig.cameras[k]
        return cam.fx * (qx / qz) + cam.cx, cam.fy * (qy / qz) + cam.cy

    def ray_stats(u, v, d):
        n = 0.0
        s0 = s1 = 0.0
        samples = []
        for k in range(n_views):
            wu, wv = warp(float(u), float(v), d, k)
            ui = int(math.floor(wu + 0.5))
            vi = int(math.floor(wv + 0.5))
            if not (0 <= ui < w and 0 <= vi < h):
                continue
            if not descriptors[k].valid[vi, ui] or labels[k].dynamic[vi, ui]:
                continue
            f = descriptors[k].values[vi, ui]
            samples.append(f)
            n += 1.0
            s0 = s0 + float(f[0])
            s1 = s1 + float(f[1])
        if n == 0:
            return 0.0, 0
        m0, m1 = s0 / n, s1 / n
        acc = 0.0
        for f in samples:
            d0 = float(f[0]) - m0
            d1 = float(f[1]) - m1
            acc = acc + (d0 * d0 + d1 * d1)
        return acc / n, int(n)

    lam = params.miss_penalty
    if lam is None:
        pool = []
        for p, prior in enumerate(candidates_per_pixel):
            var, n = ray_stats(p % w, p // w, float(prior.mu))
            if n >= params.min_static_views:
                pool.append(var)
        lam = params.beta * float(np.percentile(np.array(pool), 95.0)) if pool else 0.0

    values = np.full((h, w), -np.inf, dtype=np.float32)
    valid = np.zeros((h, w), dtype=bool)
    for p, prior in enumerate(candidates_per_pixel):
        u, v = p % w, p // w
        logps = np.log(prior.probs)
        best_e = math.inf
        best_d = math.nan
        ok = False
        for c, logp in zip(prior.candidates, logps):
            var, n = ray_stats(u, v, float(c))
            if n >= params.min_static_views:
                like = params.beta * var
                ok = True
            else:
                like = lam
            energy = like - params.prior_weight * logp
            if energy < best_e:
                best_e = energy
                best_d = float(c)
        if ok:
            values[v, u] = best_d
            valid[v, u] = True
    return DisparityRaster.from_values(values, valid)


def scene_from_dict(doc: dict) -> SceneSpec:
    """Build a scene from a parsed YAML document (see docs for the schema)."""
    try:
        rig_doc = doc["rig"]
        rig = linear_rig(
            [float(x) for x in rig_doc["spacings"]],
            fx=float(rig_doc.get("fx", 500.0)),
            image_size=tuple(int(x) for x in rig_doc.get("image_size", (640, 480))),
        )
        planes = tuple(
            PlaneSpec(
                depth=float(p["depth"]),
                seed=int(p.get("seed", 0)),
                kind=str(p.get("kind", "noise")),
                scale=int(p.get("scale", 6)),
                region=tuple(int(x) for x in p["region"]) if p.get("region") else None,
            )
            for p in doc.get("background", [])
        )
        occs = tuple(
            OccluderSpec(
                depth=float(o["depth"]),
                region=tuple(int(x) for x in o["region"]),
                prob=float(o.get("prob", 1.0)),
                seed=int(o.get("seed", 100)),
                scale=int(o.get("scale", 5)),
                mask_pad=int(o.get("mask_pad", 0)),
            )
            for o in doc.get("occluders", [])
        )
        return SceneSpec(
            background=planes,
            occluders=occs,
            rig=rig,
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"malformed scene document: {exc}") from exc


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(yaml.safe_load(f))


def write_dataset(
    spec: SceneSpec, out_dir, n_frames: int = 1, seed: int = 0, sampling: str = "nearest"
) -> list[GroundTruth]:
    """Render frames into the dataset layout plus ground-truth artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "calib.txt").write_text(format_calibration(spec.rig), encoding="utf-8")
    truths = []
    for i in range(n_frames):
        frame, gt = render_lightfield(spec, seed=seed + i, sampling=sampling)
        frame_dir = out_dir / str(i)
        frame_dir.mkdir(exist_ok=True)
        for k in range(len(spec.rig)):
            write_image_gray(frame.images[k], frame_dir / f"cam_{k}.png")
            write_image_gray(frame.prob_masks[k], frame_dir / f"mask_{k}.png")
        write_disparity_pfm(gt.disparity, frame_dir / "gt_disparity.pfm")
        write_image_gray(gt.background, frame_dir / "gt_background.png")
        truths.append(gt)
    return truths
