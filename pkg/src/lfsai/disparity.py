"""Per-pixel MAP disparity estimation and post-processing.

For every reference pixel the estimator minimizes

    E(d) = beta * Var(static-ray descriptors at d) - prior_weight * log p(d)

over the pixel's candidate set (Gaussian window around the triangulation
prior plus disparities of nearby support points). Candidates whose warp
leaves fewer than ``min_static_views`` static rays keep a fixed likelihood
penalty so they stay admissible but disfavoured; pixels where every
candidate lacks static rays become gaps.

Dynamic reference pixels are estimated exactly like static ones - their own
ray is simply excluded - which is what recovers the disparity of occluded
background.

Everything is pure per pixel: the candidate plan is built once, the
likelihood is evaluated in vectorized groups of pixels sharing a candidate
value (ascending, strict-less argmin update, so ties resolve to the
smallest disparity), and row bands can be farmed out to worker processes
without changing any result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .io import DisparityRaster, LightFieldFrame
from .params import EstimatorParams
from .rig import CameraRig, PixelCoord, reproject_points
from .sampling import nearest_indices
from .segmentation import LabelMap
from .support import (
    VARIANT_LIKELIHOOD,
    DescriptorField,
    PriorDistribution,
    SupportMesh,
    mixture_log_probs,
    sobel_descriptor_field,
)

VCAP_PERCENTILE = 95.0


def candidate_set(prior: PriorDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Candidates of a prior with their log probabilities, ascending."""
    return prior.candidates, np.log(prior.probs)


def _usable_views(descriptors, labels) -> list[np.ndarray]:
    """Per view: flattened mask of pixels that are valid and static."""
    return [
        (desc.valid & ~lm.dynamic).ravel()
        for desc, lm in zip(descriptors, labels)
    ]


_EYE3 = np.eye(3)


class _RayGatherer:
    """Per-frame state for evaluating static-ray statistics at many candidates.

    Precomputes the shared back-projection rays and, for views whose
    relative pose is a pure x-translation, the vertical warp (constant per
    pixel). The shortcuts only drop multiplications by exact 1.0 and
    additions of exact +-0.0, so every coordinate is bit-identical to
    :func:`lfsai.rig.reproject_points` on the same inputs.
    """

    def __init__(self, desc_flat, usable_flat, rig: CameraRig, shape):
        h, w = shape
        self.shape = shape
        self.rig = rig
        self.desc_flat = desc_flat
        self.usable_flat = usable_flat
        ref = rig.reference
        idx = np.arange(h * w, dtype=np.int64)
        self.rx = ((idx % w).astype(np.float64) - ref.cx) / ref.fx
        self.ry = ((idx // w).astype(np.float64) - ref.cy) / ref.fy
        self.focal_baseline = ref.fx * rig.unit_baseline
        self.views = []
        for k in range(len(rig)):
            cam = rig.cameras[k]
            r_rel, t_rel = rig.relative_extrinsics(k)
            rectified = np.array_equal(r_rel, _EYE3) and t_rel[1] == 0.0 and t_rel[2] == 0.0
            if rectified:
                wv = cam.fy * self.ry + cam.cy
                vi = np.floor(wv + 0.5).astype(np.int64)
                v_ok = (vi >= 0) & (vi < h)
                viw = np.clip(vi, 0, h - 1) * w
                self.views.append((cam, r_rel, t_rel, viw, v_ok))
            else:
                self.views.append((cam, r_rel, t_rel, None, None))

    def stats(self, pix: np.ndarray, d) -> tuple[np.ndarray, np.ndarray]:
        """Variance of static-ray descriptors and static-ray count at ``d``.

        ``pix`` are flat pixel indices; ``d`` is a scalar candidate or a
        per-pixel array. A ray counts when its warp lands in bounds on a
        usable (valid and static) pixel. Accumulation runs in view order so
        the result is bit-reproducible.
        """
        h, w = self.shape
        rx = self.rx[pix]
        ry = self.ry[pix]
        s = np.asarray(d, dtype=np.float64) / self.focal_baseline
        n_px = pix.size
        count = np.zeros(n_px)
        sums = None
        feats = []
        weights = []
        for k, (cam, r_rel, t_rel, viw, v_ok) in enumerate(self.views):
            if viw is not None:
                wu = cam.fx * (rx + t_rel[0] * s) + cam.cx
                ui = np.floor(wu + 0.5).astype(np.int64)
                inb = (ui >= 0) & (ui < w) & v_ok[pix]
                lin = viw[pix] + np.clip(ui, 0, w - 1)
            else:
                qx = r_rel[0, 0] * rx + r_rel[0, 1] * ry + r_rel[0, 2] + t_rel[0] * s
                qy = r_rel[1, 0] * rx + r_rel[1, 1] * ry + r_rel[1, 2] + t_rel[1] * s
                qz = r_rel[2, 0] * rx + r_rel[2, 1] * ry + r_rel[2, 2] + t_rel[2] * s
                wu = cam.fx * (qx / qz) + cam.cx
                wv = cam.fy * (qy / qz) + cam.cy
                ui, vi, inb = nearest_indices(wu, wv, (h, w))
                lin = vi * w + ui
            ok = inb & self.usable_flat[k][lin]
            f = self.desc_flat[k][lin]
            wgt = ok.astype(np.float64)
            feats.append(f)
            weights.append(wgt)
            count += wgt
            contrib = f * wgt[:, None]
            sums = contrib if sums is None else sums + contrib
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = sums / count[:, None]
        acc = np.zeros(n_px)
        for f, wgt in zip(feats, weights):
            diff = f - mean
            acc += wgt * np.einsum("ij,ij->i", diff, diff)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = acc / count
        var = np.where(count > 0, var, 0.0)
        return var, count.astype(np.int64)


def _ray_stats(
    descriptors: Sequence[DescriptorField],
    labels: Sequence[LabelMap],
    rig: CameraRig,
    us: np.ndarray,
    vs: np.ndarray,
    d,
) -> tuple[np.ndarray, np.ndarray]:
    """Static-ray variance/count at arbitrary (possibly sub-pixel) coordinates.

    Same inclusion rules and accumulation order as :class:`_RayGatherer`
    (which serves the hot path at pixel centers).
    """
    h, w = labels[0].dynamic.shape
    desc_flat = [desc.values.reshape(-1, desc.values.shape[-1]) for desc in descriptors]
    usable_flat = _usable_views(descriptors, labels)
    n_px = us.size
    count = np.zeros(n_px)
    sums = None
    feats = []
    weights = []
    for k in range(len(rig)):
        wu, wv = reproject_points(rig, us, vs, d, k)
        ui, vi, inb = nearest_indices(wu, wv, (h, w))
        lin = vi * w + ui
        ok = inb & usable_flat[k][lin]
        f = desc_flat[k][lin]
        wgt = ok.astype(np.float64)
        feats.append(f)
        weights.append(wgt)
        count += wgt
        contrib = f * wgt[:, None]
        sums = contrib if sums is None else sums + contrib
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / count[:, None]
    acc = np.zeros(n_px)
    for f, wgt in zip(feats, weights):
        diff = f - mean
        acc += wgt * np.einsum("ij,ij->i", diff, diff)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = acc / count
    var = np.where(count > 0, var, 0.0)
    return var, count.astype(np.int64)


def static_ray_variance(
    descriptors: Sequence[DescriptorField],
    labels: Sequence[LabelMap],
    rig: CameraRig,
    x_ref: PixelCoord,
    d: float,
) -> tuple[float, int]:
    """Scalar :func:`_ray_stats` at one pixel; (0.0, 0) when no ray is static."""
    var, n = _ray_stats(
        descriptors,
        labels,
        rig,
        np.array([x_ref[0]], dtype=np.float64),
        np.array([x_ref[1]], dtype=np.float64),
        float(d),
    )
    return float(var[0]), int(n[0])


@dataclass
class CandidatePlan:
    """Per-pixel candidate sets for a whole frame.

    Windows are kept implicitly as grid-index bounds (``lo``/``hi``) with
    their log-priors stored pixel-major in ``logp_flat`` (offset
    ``win_start[p] + (i - lo[p])`` for grid index i); candidates injected
    outside the window live in explicit ``extra_blocks``. The per-pixel
    construction mirrors :func:`lfsai.support.prior_distribution_at` bit
    for bit. ``iter_groups`` yields (value, pixels, log_priors) groups in
    ascending candidate order, optionally restricted to a flat-index band.
    """

    shape: tuple[int, int]
    grid: np.ndarray
    mu: np.ndarray | None  # (P,) interpolated prior mean, None for uniform
    lo: np.ndarray  # (P,) first grid index of the window
    hi: np.ndarray  # (P,) one past the last grid index
    plain: np.ndarray  # (P,) bool: candidate set is exactly the window
    win_start: np.ndarray  # (P,) offsets into logp_flat
    logp_flat: np.ndarray  # window log-priors, pixel-major
    uniform_logp: float | None  # constant log-prior (mesh fallback)
    extra_blocks: list  # [(value, pixel_idx, logp)] ascending by value

    def iter_groups(self, p0: int = 0, p1: int | None = None):
        """Yield (value, pixel_idx, logp) groups ascending in value."""
        h, w = self.shape
        if p1 is None:
            p1 = h * w
        lo = self.lo[p0:p1]
        hi = self.hi[p0:p1]
        plain = self.plain[p0:p1]
        win_start = self.win_start[p0:p1]
        extras = [
            (v, pix, lp)
            for v, pix, lp in self.extra_blocks
            if ((pix >= p0) & (pix < p1)).any()
        ]
        ei = 0
        occupied = plain & (hi > lo)
        if occupied.any():
            i_first = int(lo[occupied].min())
            i_last = int(hi[occupied].max())
        else:
            i_first = i_last = 0
        for i in range(i_first, i_last):
            value = float(self.grid[i])
            while ei < len(extras) and extras[ei][0] < value:
                v, pix, lp = extras[ei]
                sel = (pix >= p0) & (pix < p1)
                yield v, pix[sel], lp[sel]
                ei += 1
            local = np.flatnonzero(plain & (lo <= i) & (i < hi))
            if local.size:
                if self.uniform_logp is not None:
                    logp = np.full(local.size, self.uniform_logp)
                else:
                    logp = self.logp_flat[win_start[local] + (i - lo[local])]
                yield value, local + p0, logp
        while ei < len(extras):
            v, pix, lp = extras[ei]
            sel = (pix >= p0) & (pix < p1)
            yield v, pix[sel], lp[sel]
            ei += 1


def build_candidate_plan(
    mesh: SupportMesh | None,
    shape: tuple[int, int],
    params: EstimatorParams,
    grid: np.ndarray,
) -> CandidatePlan:
    """Assemble every pixel's candidate set and log-priors for one frame.

    With ``mesh=None`` (triangulation fallback) every pixel gets the full
    uniform grid. Pixels whose neighbourhood injects candidates outside
    their Gaussian window are normalized through the scalar prior helpers;
    all others take a vectorized path that performs the identical float
    operations (same exp/divide expressions, same np.add.reduce normalizer
    over runs of equal length), so the plan is bit-for-bit what
    per-pixel :func:`lfsai.support.prior_distribution_at` calls produce.
    """
    h, w = shape
    n_px = h * w
    if mesh is None:
        g = grid.size
        return CandidatePlan(
            shape=shape,
            grid=grid,
            mu=None,
            lo=np.zeros(n_px, dtype=np.int64),
            hi=np.full(n_px, g, dtype=np.int64),
            plain=np.ones(n_px, dtype=bool),
            win_start=np.zeros(n_px, dtype=np.int64),
            logp_flat=np.empty(0),
            uniform_logp=float(-np.log(float(g))),
            extra_blocks=[],
        )

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    mu = mesh.interpolate(uu.ravel(), vv.ravel())

    wlo = mu - 3.0 * params.sigma
    whi = mu + 3.0 * params.sigma
    lo = np.searchsorted(grid, wlo, side="left").astype(np.int64)
    hi = np.searchsorted(grid, whi, side="right").astype(np.int64)

    inj_pix, inj_val = _injected_pairs(mesh, shape, params, grid, lo, hi)
    has_extra = np.zeros(n_px, dtype=bool)
    has_extra[inj_pix] = True
    plain = ~has_extra
    counts = np.where(plain, hi - lo, 0)
    two_sigma_sq = 2.0 * params.sigma * params.sigma

    # Window-only pixels: per window length, build each pixel's candidate
    # probabilities as one matrix row, normalize with the same
    # np.add.reduce the scalar prior applies to its contiguous array
    # (bit-identical association), and scatter the log-priors pixel-major.
    win_start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    plain_idx = np.flatnonzero(plain)
    cnt = counts[plain_idx]
    logp_flat = np.empty(int(cnt.sum()))
    for n in np.unique(cnt):
        if n == 0:
            continue
        sel = plain_idx[cnt == n]
        span = np.arange(int(n))[None, :]
        vals = grid[lo[sel][:, None] + span]
        probs = params.gamma / grid.size + (1.0 - params.gamma) * np.exp(
            -((vals - mu[sel][:, None]) ** 2) / two_sigma_sq
        )
        z = np.add.reduce(probs, axis=1)
        dest = win_start[sel][:, None] + span
        logp_flat[dest.ravel()] = np.log(probs / z[:, None]).ravel()

    # Pixels with out-of-window injections run the scalar prior verbatim.
    extra_blocks = []
    if inj_pix.size:
        order = np.lexsort((inj_val, inj_pix))
        inj_pix, inj_val = inj_pix[order], inj_val[order]
        seg = np.flatnonzero(np.r_[True, inj_pix[1:] != inj_pix[:-1]])
        seg_end = np.r_[seg[1:], inj_pix.size]
        extra_pix, extra_val, extra_logp = [], [], []
        for s, e in zip(seg, seg_end):
            p = int(inj_pix[s])
            cands = np.unique(np.concatenate([grid[lo[p] : hi[p]], inj_val[s:e]]))
            probs, zz = mixture_log_probs(
                cands, float(mu[p]), float(wlo[p]), float(whi[p]),
                params.sigma, params.gamma, grid.size,
            )
            extra_pix.append(np.full(cands.size, p, dtype=np.int64))
            extra_val.append(cands)
            extra_logp.append(np.log(probs / zz))
        ep = np.concatenate(extra_pix)
        ev = np.concatenate(extra_val)
        el = np.concatenate(extra_logp)
        order = np.lexsort((ep, ev))
        ep, ev, el = ep[order], ev[order], el[order]
        starts = np.flatnonzero(np.r_[True, ev[1:] != ev[:-1]])
        ends = np.r_[starts[1:], ev.size]
        extra_blocks = [(float(ev[s]), ep[s:e], el[s:e]) for s, e in zip(starts, ends)]

    return CandidatePlan(
        shape=shape,
        grid=grid,
        mu=mu,
        lo=lo,
        hi=hi,
        plain=plain,
        win_start=win_start,
        logp_flat=logp_flat,
        uniform_logp=None,
        extra_blocks=extra_blocks,
    )


def _injected_pairs(mesh, shape, params, grid, lo, hi):
    """(pixel, disparity) pairs injected from support points near each pixel.

    Uses one euclidean distance transform per distinct support disparity;
    inclusion at the radius boundary matches the KD-tree query of the
    scalar prior (both compare exact euclidean distances).
    """
    from scipy.ndimage import distance_transform_edt

    h, w = shape
    sup_uv = mesh._support_tree.data
    sup_d = mesh._support_d
    if sup_uv.shape[0] == 0 or params.neighborhood_radius <= 0:
        return np.empty(0, np.int64), np.empty(0)

    pix_list, val_list = [], []
    for d in np.unique(sup_d):
        sel = sup_d == d
        seed = np.ones((h, w), dtype=bool)
        su = np.clip(np.round(sup_uv[sel, 0]).astype(np.int64), 0, w - 1)
        sv = np.clip(np.round(sup_uv[sel, 1]).astype(np.int64), 0, h - 1)
        seed[sv, su] = False
        dist = distance_transform_edt(seed)
        near = np.flatnonzero((dist <= params.neighborhood_radius).ravel())
        if near.size:
            pix_list.append(near)
            val_list.append(np.full(near.size, d))
    if not pix_list:
        return np.empty(0, np.int64), np.empty(0)
    pix = np.concatenate(pix_list)
    val = np.concatenate(val_list)

    # Drop injections already present as window grid candidates.
    idx = np.searchsorted(grid, val)
    idxc = np.minimum(idx, grid.size - 1)
    on_grid = grid[idxc] == val
    dup = on_grid & (idxc >= lo[pix]) & (idxc < hi[pix])
    pix, val = pix[~dup], val[~dup]
    if pix.size == 0:
        return pix, val

    # Dedupe identical (pixel, value) pairs from different support points.
    order = np.lexsort((val, pix))
    pix, val = pix[order], val[order]
    keep = np.r_[True, (pix[1:] != pix[:-1]) | (val[1:] != val[:-1])]
    return pix[keep], val[keep]


def map_disparity(
    frame: LightFieldFrame,
    labels: Sequence[LabelMap],
    rig: CameraRig,
    mesh: SupportMesh | None,
    params: EstimatorParams,
    descriptors: Sequence[DescriptorField] | None = None,
    plan: CandidatePlan | None = None,
    workers: int | None = None,
) -> DisparityRaster:
    """MAP disparity for every reference pixel (smallest-d tie-break).

    ``mesh=None`` falls back to a uniform prior over the full grid.
    ``descriptors`` (likelihood variant) and ``plan`` can be precomputed and
    reused across calls; results do not depend on ``workers``.
    """
    h, w = frame.shape
    grid = params.disparity_grid(rig)
    if descriptors is None:
        descriptors = [sobel_descriptor_field(img, VARIANT_LIKELIHOOD) for img in frame.images]
    if plan is None:
        plan = build_candidate_plan(mesh, (h, w), params, grid)
    if workers is None:
        workers = params.workers

    lam = _miss_penalty(plan, descriptors, labels, rig, params)
    if workers > 1:
        from .parallel import map_row_bands

        best_d, valid = map_row_bands(
            _evaluate_band, h, workers,
            plan, descriptors, [lm.dynamic for lm in labels], rig, params, lam,
        )
    else:
        best_d, valid = _evaluate_band(
            (0, h), plan, descriptors, [lm.dynamic for lm in labels], rig, params, lam
        )
    return DisparityRaster.from_values(
        best_d.reshape(h, w).astype(np.float32), valid.reshape(h, w)
    )


def _miss_penalty(
    plan: CandidatePlan,
    descriptors,
    labels,
    rig: CameraRig,
    params: EstimatorParams,
) -> float:
    """First pass: beta times the 95th-percentile static-ray variance at the
    prior mean (grid midpoint under the uniform fallback)."""
    if params.miss_penalty is not None:
        return params.miss_penalty
    h, w = plan.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d_probe = plan.mu if plan.mu is not None else np.full(h * w, plan.grid[plan.grid.size // 2])
    var, n = _ray_stats(descriptors, labels, rig, uu.ravel(), vv.ravel(), d_probe)
    pool = var[n >= params.min_static_views]
    if pool.size == 0:
        return 0.0
    return params.beta * float(np.percentile(pool, VCAP_PERCENTILE))


class _LabelView:
    """Adapter giving _ray_stats label access from plain boolean arrays."""

    __slots__ = ("dynamic",)

    def __init__(self, dynamic: np.ndarray):
        self.dynamic = dynamic


def _evaluate_band(
    rows: tuple[int, int],
    plan: CandidatePlan,
    descriptors,
    dynamic_maps,
    rig: CameraRig,
    params: EstimatorParams,
    lam: float,
):
    """Argmin E(d) for the pixels of one row band; pure, band-independent."""
    h, w = plan.shape
    labels_view = [_LabelView(dm) for dm in dynamic_maps]
    desc_flat = [d.values.reshape(-1, d.values.shape[-1]) for d in descriptors]
    usable = _usable_views(descriptors, labels_view)

    r0, r1 = rows
    p0, p1 = r0 * w, r1 * w
    n_px = p1 - p0
    best_e = np.full(n_px, np.inf)
    best_d = np.full(n_px, np.nan)
    any_ok = np.zeros(n_px, dtype=bool)

    gatherer = _RayGatherer(desc_flat, usable, rig, (h, w))
    for d, pix, logp in plan.iter_groups(p0, p1):
        if pix.size == 0:
            continue
        var, n = gatherer.stats(pix, d)
        enough = n >= params.min_static_views
        like = np.where(enough, params.beta * var, lam)
        energy = like - params.prior_weight * logp
        local = pix - p0
        any_ok[local] |= enough
        better = energy < best_e[local]
        lb = local[better]
        best_e[lb] = energy[better]
        best_d[lb] = d
    return best_d, any_ok


def fill_gaps(raster: DisparityRaster) -> DisparityRaster:
    """Fill invalid pixels from the nearest valid row neighbours.

    Both neighbours present: take the smaller disparity (occluded gaps
    belong to the background). Rows with no valid pixel fall back to the
    same rule along columns of the input raster. Unfillable pixels stay
    invalid.
    """
    values = raster.values.copy()
    valid = raster.valid.copy()
    h, w = values.shape
    empty_rows = []
    for v in range(h):
        row_valid = np.flatnonzero(raster.valid[v])
        if row_valid.size == 0:
            empty_rows.append(v)
            continue
        holes = np.flatnonzero(~raster.valid[v])
        if holes.size == 0:
            continue
        pos = np.searchsorted(row_valid, holes)
        left = np.where(pos > 0, row_valid[np.maximum(pos - 1, 0)], -1)
        right = np.where(pos < row_valid.size, row_valid[np.minimum(pos, row_valid.size - 1)], -1)
        fill = np.empty(holes.size, dtype=np.float32)
        both = (left >= 0) & (right >= 0)
        fill[both] = np.minimum(
            raster.values[v, left[both]], raster.values[v, right[both]]
        )
        only_l = (left >= 0) & (right < 0)
        fill[only_l] = raster.values[v, left[only_l]]
        only_r = (left < 0) & (right >= 0)
        fill[only_r] = raster.values[v, right[only_r]]
        values[v, holes] = fill
        valid[v, holes] = True
    for v in empty_rows:
        col_valid_mask = raster.valid[:, :]
        for u in range(w):
            col_valid = np.flatnonzero(col_valid_mask[:, u])
            if col_valid.size == 0:
                continue
            pos = int(np.searchsorted(col_valid, v))
            cands = []
            if pos > 0:
                cands.append(raster.values[col_valid[pos - 1], u])
            if pos < col_valid.size:
                cands.append(raster.values[col_valid[pos], u])
            values[v, u] = min(cands)
            valid[v, u] = True
    return DisparityRaster.from_values(values, valid)


def median_filter_disparity(raster: DisparityRaster, window: int) -> DisparityRaster:
    """Median over the valid values in a window x window neighbourhood.

    Invalid pixels stay invalid; validity is never expanded.

    Raises:
        ParameterError: even or too-small window.
    """
    if window % 2 == 0 or window < 3:
        raise ParameterError(f"median window must be odd and >= 3, got {window}")
    h, w = raster.values.shape
    half = window // 2
    padded = np.pad(
        np.where(raster.valid, raster.values.astype(np.float64), np.nan),
        half,
        mode="constant",
        constant_values=np.nan,
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    stacked = windows.reshape(h, w, window * window)
    # NaNs sort to the end; take the middle of the leading valid run.
    ordered = np.sort(stacked, axis=2)
    counts = np.sum(~np.isnan(stacked), axis=2)
    counts_c = np.maximum(counts, 1)
    lo_mid = np.take_along_axis(ordered, ((counts_c - 1) // 2)[..., None], axis=2)[..., 0]
    hi_mid = np.take_along_axis(ordered, (counts_c // 2)[..., None], axis=2)[..., 0]
    med = 0.5 * (lo_mid + hi_mid)
    values = np.where(raster.valid, med, -np.inf).astype(np.float32)
    return DisparityRaster.from_values(values, raster.valid.copy())
