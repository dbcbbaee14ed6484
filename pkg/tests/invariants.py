"""Module invariants as reusable randomized checks.

Each ``check_*`` function raises AssertionError on violation. Module test
files call them with quick trial counts during development; the acceptance
suite re-runs every one at 100 randomized trials (a trial is one randomized
assertion instance: a fresh rig, raster, pixel, point or frame as natural
for the property; frame-level checks draw scenes from a shared rendered
pool to keep runtimes sane).
"""

import numpy as np

from lfsai.disparity import (
    _ray_stats,
    build_candidate_plan,
    fill_gaps,
    map_disparity,
    median_filter_disparity,
)
from lfsai.io import DisparityRaster, read_disparity_pfm, write_disparity_pfm
from lfsai.params import EstimatorParams
from lfsai.refocus import synthesize_refocused
from lfsai.rig import (
    PixelCoord,
    baseline_ratio,
    pixel_shift_ratio,
    plane_warp,
    reproject_pixel,
    reproject_points,
)
from lfsai.sampling import bilinear_sample, nearest_indices
from lfsai.segmentation import LabelMap, assignment_energy, refine_labels_estep, threshold_labels
from lfsai.support import (
    ORIGIN_RECOVERED,
    ORIGIN_REFERENCE,
    VARIANT_LIKELIHOOD,
    VARIANT_MATCH,
    SupportPoint,
    build_triangulation,
    filter_support_points,
    match_support_grid,
    recover_occluded_support,
    sobel_descriptor_field,
)
from lfsai.synth import render_lightfield

from conftest import random_rectified_rig, random_rotated_rig
from scenes import random_scene, small_rig

DEFAULT_PARAMS = EstimatorParams(d_max=30.0)


# ---------------------------------------------------------------- rig ----

def check_rig_reference_identity(trials, seed=10):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        rig = random_rotated_rig(rng)
        w, h = rig.image_size
        p = PixelCoord(float(rng.uniform(0, w)), float(rng.uniform(0, h)))
        out = reproject_pixel(rig, p, float(rng.uniform(0, 40)), 0)
        np.testing.assert_allclose(out, p, atol=1e-9)


def check_rig_rectified_shift(trials, seed=11):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        rig = random_rectified_rig(rng)
        w, h = rig.image_size
        k = int(rng.integers(0, len(rig)))
        p = PixelCoord(float(rng.uniform(0, w)), float(rng.uniform(0, h)))
        d = float(rng.uniform(0, 30))
        u2, v2 = reproject_pixel(rig, p, d, k)
        assert abs(v2 - p.v) < 1e-9
        assert abs(abs(u2 - p.u) - baseline_ratio(rig, k) * d) < 1e-7


def check_rig_warp_agreement(trials, seed=12):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        rig = random_rotated_rig(rng)
        w, h = rig.image_size
        k = int(rng.integers(0, len(rig)))
        d = float(rng.uniform(0, 30))
        hom = plane_warp(rig, k, d)
        u, v = rng.uniform(0, w), rng.uniform(0, h)
        hx = hom @ np.array([u, v, 1.0])
        ru, rv = reproject_pixel(rig, PixelCoord(u, v), d, k)
        assert abs(hx[0] / hx[2] - ru) < 1e-6
        assert abs(hx[1] / hx[2] - rv) < 1e-6


def check_rig_monotone_displacement(trials, seed=13):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        rig = random_rotated_rig(rng)
        w, h = rig.image_size
        k = int(rng.integers(1, len(rig)))
        p = PixelCoord(float(rng.uniform(0, w)), float(rng.uniform(0, h)))
        ds = np.sort(rng.uniform(0.0, 30.0, size=6))
        base = np.array(reproject_pixel(rig, p, 0.0, k))
        mags = [np.linalg.norm(np.array(reproject_pixel(rig, p, float(d), k)) - base) for d in ds]
        assert np.all(np.diff(mags) > 0)


# ----------------------------------------------------------------- io ----

def check_pfm_round_trip(trials, seed=20, tmp_dir=None):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(seed)
    base = Path(tmp_dir) if tmp_dir else Path(tempfile.mkdtemp(prefix="lf_pfm_"))
    for t in range(trials):
        h, w = int(rng.integers(1, 16)), int(rng.integers(1, 16))
        raster = DisparityRaster.from_values(
            rng.uniform(0, 50, size=(h, w)).astype(np.float32),
            rng.uniform(size=(h, w)) > 0.25,
        )
        path = base / f"{t}.pfm"
        write_disparity_pfm(raster, path)
        back = read_disparity_pfm(path)
        np.testing.assert_array_equal(back.values, raster.values)
        np.testing.assert_array_equal(back.valid, raster.valid)


def check_mask_probabilities_bounded(trials, seed=21):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        raw = rng.integers(0, 256, size=(12, 16)).astype(np.float64)
        prob = raw / 255.0
        assert prob.min() >= 0.0 and prob.max() <= 1.0


# -------------------------------------------------------- segmentation ----

def _consistent_frame(rng, rig):
    """All views share one smooth image (scene at infinity, d = 0)."""
    from lfsai.io import LightFieldFrame

    w, h = rig.image_size
    base = rng.uniform(0.2, 0.8, size=(h // 4 + 2, w // 4 + 2))
    img = np.kron(base, np.ones((4, 4)))[:h, :w]
    img = np.floor(img * 255.0 + 0.5) / 255.0
    images = tuple(img.copy() for _ in range(len(rig)))
    masks = tuple(np.zeros((h, w)) for _ in range(len(rig)))
    return LightFieldFrame(images=images, prob_masks=masks, rig=rig)


def check_estep_fixed_point(trials, seed=30):
    rng = np.random.default_rng(seed)
    rig = small_rig((32, 24))
    params = DEFAULT_PARAMS
    for _ in range(trials):
        frame = _consistent_frame(rng, rig)
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        desc = [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in frame.images]
        h, w = frame.shape
        disp = DisparityRaster.from_values(
            np.zeros((h, w), dtype=np.float32), np.ones((h, w), dtype=bool)
        )
        refined = refine_labels_estep(frame, labels, disp, desc, rig, params)
        for a, b in zip(refined, labels):
            np.testing.assert_array_equal(a.dynamic, b.dynamic)


def check_estep_picks_admissible_static(trials, seed=31):
    """The chosen assignment has >= 1 static view and matches brute-force
    enumeration of the energy (identity-warp single-pixel construction)."""
    from lfsai.io import LightFieldFrame

    rng = np.random.default_rng(seed)
    rig = small_rig((16, 12))
    params = DEFAULT_PARAMS
    w, h = rig.image_size
    u0, v0 = 8, 6
    for _ in range(trials):
        feats = rng.uniform(-30, 30, size=len(rig))
        probs = rng.uniform(0.02, 0.98, size=len(rig))
        images = tuple(np.full((h, w), 0.5) for _ in range(len(rig)))
        masks = tuple(np.full((h, w), p) for p in probs)
        frame = LightFieldFrame(images=images, prob_masks=masks, rig=rig)
        descs = []
        for k in range(len(rig)):
            values = np.full((h, w, 1), feats[k])
            valid = np.ones((h, w), dtype=bool)
            from lfsai.support import DescriptorField

            descs.append(DescriptorField(values=values, valid=valid, variant="likelihood"))
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        vals = np.full((h, w), -np.inf, dtype=np.float32)
        vals[v0, u0] = 0.0
        disp = DisparityRaster.from_values(vals, np.isfinite(vals))
        refined = refine_labels_estep(frame, labels, disp, descs, rig, params)
        chosen = [not refined[k].dynamic[v0, u0] for k in range(len(rig))]
        assert any(chosen), "assignment must keep at least one static view"
        # independent argmin over all admissible assignments
        desc_mat = np.array(feats)[:, None]
        best = min(
            (
                a
                for a in range(1, 1 << len(rig))
            ),
            key=lambda a: (
                assignment_energy(desc_mat, probs, [k for k in range(len(rig)) if a >> k & 1], params.beta),
                a,
            ),
        )
        expected = [(best >> k & 1) == 1 for k in range(len(rig))]
        assert chosen == expected


def check_estep_idempotent(trials, seed=32):
    rng = np.random.default_rng(seed)
    rig = small_rig((32, 24))
    params = DEFAULT_PARAMS
    for _ in range(trials):
        frame, gt = render_lightfield(random_scene(rng, (32, 24)), seed=int(rng.integers(1 << 30)))
        labels = [threshold_labels(np.clip(m + rng.uniform(-0.2, 0.2, m.shape), 0, 1), 0.5)
                  for m in frame.prob_masks]
        desc = [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in frame.images]
        once = refine_labels_estep(frame, labels, gt.disparity, desc, frame.rig, params)
        twice = refine_labels_estep(frame, once, gt.disparity, desc, frame.rig, params)
        for a, b in zip(once, twice):
            np.testing.assert_array_equal(a.dynamic, b.dynamic)


# ------------------------------------------------------------- support ----

def _scene_pool(rng, n, image_size=(64, 48)):
    pool = []
    for _ in range(n):
        spec = random_scene(rng, image_size)
        frame, gt = render_lightfield(spec, seed=int(rng.integers(1 << 30)))
        pool.append((spec, frame, gt))
    return pool


def _support_pipeline(frame, params=DEFAULT_PARAMS):
    rig = frame.rig
    labels = [threshold_labels(m, params.seg_threshold) for m in frame.prob_masks]
    desc = [sobel_descriptor_field(im, VARIANT_MATCH) for im in frame.images]
    pts = match_support_grid(
        desc[0], desc[1], labels[0], params, pixel_shift_ratio(rig, 1), labels[1]
    )
    pts += recover_occluded_support(frame, labels, desc, rig, params)
    return labels, desc, filter_support_points(pts, params)


def check_support_point_contracts(trials, seed=40):
    rng = np.random.default_rng(seed)
    pool = _scene_pool(rng, max(4, trials // 12))
    params = DEFAULT_PARAMS
    done = 0
    while done < trials:
        spec, frame, gt = pool[int(rng.integers(len(pool)))]
        labels, _, pts = _support_pipeline(frame, params)
        w, h = frame.rig.image_size
        for p in pts:
            assert 0 <= p.u < w and 0 <= p.v < h
            assert 0.0 <= p.d <= params.d_max
            if p.origin == ORIGIN_REFERENCE:
                assert not labels[0].dynamic[p.v, p.u]
            elif p.origin == ORIGIN_RECOVERED:
                assert labels[0].dynamic[p.v, p.u]
        done += max(len(pts), 1)


def check_triangulation_covers_rectangle(trials, seed=41):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        w, h = int(rng.integers(16, 64)), int(rng.integers(16, 48))
        n = int(rng.integers(3, 40))
        pts = [
            SupportPoint(int(rng.integers(0, w)), int(rng.integers(0, h)), float(rng.uniform(0, 20)))
            for _ in range(n)
        ]
        # retry degenerate duplicate-only sets
        if len({(p.u, p.v) for p in pts}) < 3:
            continue
        mesh = build_triangulation(pts, (w, h))
        uu = rng.uniform(0, w - 1, size=50)
        vv = rng.uniform(0, h - 1, size=50)
        mu = mesh.interpolate(uu, vv)
        assert np.all(np.isfinite(mu))


def check_prior_mu_edge_continuity(trials, seed=42):
    rng = np.random.default_rng(seed)
    done = 0
    while done < trials:
        w, h = 64, 48
        n = int(rng.integers(6, 30))
        pts = [
            SupportPoint(int(rng.integers(0, w)), int(rng.integers(0, h)), float(rng.uniform(0, 20)))
            for _ in range(n)
        ]
        if len({(p.u, p.v) for p in pts}) < 3:
            continue
        mesh = build_triangulation(pts, (w, h))
        tri = mesh._delaunay
        for _ in range(10):
            s = int(rng.integers(len(tri.simplices)))
            verts = mesh.vertex_uv[tri.simplices[s]]
            a, b = verts[0], verts[1]
            t = rng.uniform(0.2, 0.8)
            p = a + t * (b - a)
            edge = b - a
            n_vec = np.array([-edge[1], edge[0]])
            norm = np.linalg.norm(n_vec)
            if norm < 1e-9:
                continue
            n_vec = n_vec / norm
            eps = 1e-7
            q1 = np.clip(p + eps * n_vec, [0, 0], [w - 1, h - 1])
            q2 = np.clip(p - eps * n_vec, [0, 0], [w - 1, h - 1])
            m1 = mesh.interpolate(np.array([q1[0]]), np.array([q1[1]]))[0]
            m2 = mesh.interpolate(np.array([q2[0]]), np.array([q2[1]]))[0]
            assert abs(m1 - m2) < 1e-5
            done += 1


def check_match_left_right_consistency(trials, seed=43):
    rng = np.random.default_rng(seed)
    pool = _scene_pool(rng, 4)
    params = DEFAULT_PARAMS
    done = 0
    while done < trials:
        spec, frame, gt = pool[int(rng.integers(len(pool)))]
        rig = frame.rig
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        desc = [sobel_descriptor_field(im, VARIANT_MATCH) for im in frame.images]
        shift = pixel_shift_ratio(rig, 1)
        pts = match_support_grid(desc[0], desc[1], labels[0], params, shift, labels[1])
        step = 1.0 / abs(shift)
        for p in pts:
            ub = int(round(p.u + shift * p.d))
            best, best_s = np.inf, None
            fb = desc[1].values[p.v, ub]
            smax = int(np.floor(abs(shift) * params.d_max + 1e-9))
            for s in range(smax + 1):
                ua = ub + s if shift < 0 else ub - s
                if not (0 <= ua < frame.shape[1]):
                    continue
                if not desc[0].valid[p.v, ua] or labels[0].dynamic[p.v, ua]:
                    continue
                cost = float(np.abs(fb - desc[0].values[p.v, ua]).sum())
                if cost < best:
                    best, best_s = cost, s
            assert best_s is not None
            assert abs(best_s / abs(shift) - p.d) <= step + 1e-9
            done += 1
        done += 1  # guarantee progress on matchless scenes


# ----------------------------------------------------------- disparity ----

def _full_pipeline(frame, params=DEFAULT_PARAMS, mesh_override="auto"):
    labels, desc_match, pts = _support_pipeline(frame, params)
    desc_like = [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in frame.images]
    if mesh_override == "auto":
        mesh = build_triangulation(pts, frame.rig.image_size)
    else:
        mesh = mesh_override
    dmap = map_disparity(frame, labels, frame.rig, mesh, params, descriptors=desc_like)
    return labels, desc_like, mesh, dmap


def check_map_order_invariance(trials, seed=50):
    """Evaluating candidates in descending order (with the same smallest-d
    tie rule) reproduces the ascending sweep exactly."""
    rng = np.random.default_rng(seed)
    n_frames = max(1, trials // 40)
    for _ in range(n_frames):
        frame, gt = render_lightfield(random_scene(rng, (48, 36)), seed=int(rng.integers(1 << 30)))
        params = DEFAULT_PARAMS
        labels, desc_like, mesh, dmap = _full_pipeline(frame, params)
        grid = params.disparity_grid(frame.rig)
        plan = build_candidate_plan(mesh, frame.shape, params, grid)
        from lfsai.disparity import _miss_penalty

        lam = _miss_penalty(plan, desc_like, labels, frame.rig, params)
        h, w = frame.shape
        best_e = np.full(h * w, np.inf)
        best_d = np.full(h * w, np.nan)
        any_ok = np.zeros(h * w, dtype=bool)
        groups = list(plan.iter_groups())
        for d, pix, logp in reversed(groups):  # descending values
            if pix.size == 0:
                continue
            us = (pix % w).astype(np.float64)
            vs = (pix // w).astype(np.float64)
            var, n = _ray_stats(desc_like, labels, frame.rig, us, vs, d)
            enough = n >= params.min_static_views
            like = np.where(enough, params.beta * var, lam)
            energy = like - params.prior_weight * logp
            any_ok[pix] |= enough
            better = (energy < best_e[pix]) | ((energy == best_e[pix]) & (d < best_d[pix]))
            # NaN best_d compares false; treat first write explicitly
            better |= ~np.isfinite(best_e[pix])
            pb = pix[better]
            best_e[pb] = energy[better]
            best_d[pb] = d
        expected = DisparityRaster.from_values(
            best_d.reshape(h, w).astype(np.float32), any_ok.reshape(h, w)
        )
        np.testing.assert_array_equal(expected.values, dmap.values)
        np.testing.assert_array_equal(expected.valid, dmap.valid)


def check_monotone_likelihood(trials, seed=51):
    """On noise-free all-static frames, the variance at the true disparity is
    no larger than two or more steps away for >= 99% of textured pixels."""
    rng = np.random.default_rng(seed)
    params = DEFAULT_PARAMS
    n_scenes = max(1, trials // 20)
    for _ in range(n_scenes):
        from scenes import plane_scene

        depth = float(rng.uniform(10.0, 25.0))
        frame, gt = render_lightfield(plane_scene(depth=depth, image_size=(64, 48),
                                                  seed=int(rng.integers(1000))), seed=0)
        rig = frame.rig
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        desc = [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in frame.images]
        h, w = frame.shape
        d_true = float(gt.disparity.values[h // 2, w // 2])
        step = params.resolve_step(rig)
        texture = np.abs(desc[0].values).sum(axis=2)
        uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        margin = int(np.ceil(4 * params.d_max)) + 2
        sel = (texture > 200.0) & desc[0].valid & (uu >= margin)
        us, vs = uu[sel], vv[sel]
        if us.size == 0:
            continue
        var_true, n_true = _ray_stats(desc, labels, rig, us, vs, d_true)
        viol = np.zeros(us.size, dtype=bool)
        for offset in (-4 * step, -2 * step, 2 * step, 4 * step):
            c = d_true + offset
            if c < 0 or c > params.d_max:
                continue
            var_c, n_c = _ray_stats(desc, labels, rig, us, vs, c)
            viol |= (var_true > var_c) & (n_c >= 2) & (n_true >= 2)
        assert viol.mean() <= 0.01, f"monotone likelihood violated at {viol.mean():.3%}"


def check_intensity_scaling(trials, seed=52):
    from lfsai.io import LightFieldFrame

    rng = np.random.default_rng(seed)
    params = DEFAULT_PARAMS.with_overrides(d_max=8.0)
    n_frames = max(1, trials // 30)
    for _ in range(n_frames):
        frame, gt = render_lightfield(random_scene(rng, (32, 24)), seed=int(rng.integers(1 << 30)))
        c = float(rng.uniform(0.3, 0.9))
        scaled = LightFieldFrame(
            images=tuple(im * c for im in frame.images),
            prob_masks=frame.prob_masks,
            rig=frame.rig,
        )
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        d1 = [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in frame.images]
        d2 = [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in scaled.images]
        h, w = frame.shape
        us = rng.uniform(2, w - 2, size=30)
        vs = rng.uniform(2, h - 2, size=30)
        d = float(rng.uniform(0, 6))
        v1, n1 = _ray_stats(d1, labels, frame.rig, us, vs, d)
        v2, n2 = _ray_stats(d2, labels, frame.rig, us, vs, d)
        np.testing.assert_array_equal(n1, n2)
        np.testing.assert_allclose(v2, v1 * c * c, rtol=1e-9, atol=1e-9)
        m1 = map_disparity(frame, labels, frame.rig, None, params, descriptors=d1)
        m2 = map_disparity(scaled, labels, frame.rig, None, params, descriptors=d2)
        np.testing.assert_array_equal(m1.valid, m2.valid)
        # The argmin is scale-invariant wherever it is unique; float rounding
        # may flip genuine near-ties, so mismatches must be co-optimal in the
        # unscaled energy.
        diff = (m1.values != m2.values) & m1.valid
        for v, u in np.argwhere(diff):
            da, db = float(m1.values[v, u]), float(m2.values[v, u])
            va, _ = _ray_stats(d1, labels, frame.rig,
                               np.array([float(u)]), np.array([float(v)]), da)
            vb, _ = _ray_stats(d1, labels, frame.rig,
                               np.array([float(u)]), np.array([float(v)]), db)
            scale = max(1.0, abs(params.beta * va[0]))
            assert abs(params.beta * va[0] - params.beta * vb[0]) < 1e-6 * scale


def check_postfilter_bounds(trials, seed=53):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        h, w = int(rng.integers(3, 16)), int(rng.integers(3, 16))
        values = rng.uniform(0, 40, size=(h, w)).astype(np.float32)
        valid = rng.uniform(size=(h, w)) > 0.3
        raster = DisparityRaster.from_values(values, valid)
        if valid.any():
            lo, hi = values[valid].min(), values[valid].max()
        else:
            lo, hi = 0.0, 0.0
        filled = fill_gaps(raster)
        assert not filled.valid.any() or (
            filled.values[filled.valid].min() >= lo - 1e-6
            and filled.values[filled.valid].max() <= hi + 1e-6
        )
        med = median_filter_disparity(raster, 5)
        assert not med.valid.any() or (
            med.values[med.valid].min() >= lo - 1e-6
            and med.values[med.valid].max() <= hi + 1e-6
        )


# ------------------------------------------------------------- refocus ----

def check_refocus_convex_bounds(trials, seed=60):
    rng = np.random.default_rng(seed)
    pool = _scene_pool(rng, 5, (48, 36))
    done = 0
    while done < trials:
        spec, frame, gt = pool[int(rng.integers(len(pool)))]
        rig = frame.rig
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        res = synthesize_refocused(frame, labels, rig, gt.disparity)
        dyn = labels[0].dynamic & ~res.gap_mask
        if not dyn.any():
            done += 1
            continue
        h, w = frame.shape
        for v, u in np.argwhere(dyn)[
            rng.choice(dyn.sum(), size=min(10, dyn.sum()), replace=False)
        ]:
            d = float(gt.disparity.values[v, u])
            vals = []
            for k in range(len(rig)):
                wu, wv = reproject_points(
                    rig, np.array([float(u)]), np.array([float(v)]), d, k
                )
                ui, vi, inb = nearest_indices(wu, wv, (h, w))
                sample, sup = bilinear_sample(frame.images[k], wu, wv)
                if inb[0] and sup[0] and not labels[k].dynamic[vi[0], ui[0]]:
                    vals.append(float(sample[0]))
            assert vals, "non-gap pixel must have contributing rays"
            assert min(vals) - 1e-12 <= res.image[v, u] <= max(vals) + 1e-12
            done += 1


def check_refocus_gap_mask_definition(trials, seed=61):
    rng = np.random.default_rng(seed)
    pool = _scene_pool(rng, 5, (48, 36))
    for _ in range(trials):
        spec, frame, gt = pool[int(rng.integers(len(pool)))]
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        # randomly invalidate part of the disparity to exercise that branch
        disp = gt.disparity.copy()
        kill = rng.uniform(size=disp.valid.shape) < 0.1
        disp = DisparityRaster.from_values(disp.values, disp.valid & ~kill)
        res = synthesize_refocused(frame, labels, frame.rig, disp)
        np.testing.assert_array_equal(res.gap_mask, res.coverage == 0)
        dyn_invalid = labels[0].dynamic & ~disp.valid
        assert np.all(res.gap_mask[dyn_invalid])


def check_refocus_coverage_monotone(trials, seed=62):
    rng = np.random.default_rng(seed)
    pool = _scene_pool(rng, 5, (48, 36))
    for _ in range(trials):
        spec, frame, gt = pool[int(rng.integers(len(pool)))]
        labels = [threshold_labels(m, 0.5) for m in frame.prob_masks]
        res1 = synthesize_refocused(frame, labels, frame.rig, gt.disparity)
        shrunk = []
        for lm in labels:
            keep = lm.dynamic & (rng.uniform(size=lm.dynamic.shape) > 0.3)
            shrunk.append(LabelMap(dynamic=keep, source=lm.source))
        res2 = synthesize_refocused(frame, shrunk, frame.rig, gt.disparity)
        still_dyn = shrunk[0].dynamic
        assert np.all(res2.coverage[still_dyn] >= res1.coverage[still_dyn])


# --------------------------------------------------------------- synth ----

def check_render_parallax_consistency(trials, seed=70):
    rng = np.random.default_rng(seed)
    pool = _scene_pool(rng, 6, (48, 36))
    done = 0
    while done < trials:
        spec, frame, gt = pool[int(rng.integers(len(pool)))]
        rig = frame.rig
        h, w = frame.shape
        u = int(rng.integers(0, w))
        v = int(rng.integers(0, h))
        if not gt.disparity.valid[v, u]:
            continue
        d = float(gt.disparity.values[v, u])
        ok = True
        for k in range(len(rig)):
            wu, wv = reproject_pixel(rig, PixelCoord(float(u), float(v)), d, k)
            ui, vi = int(np.floor(wu + 0.5)), int(np.floor(wv + 0.5))
            if not (0 <= ui < w and 0 <= vi < h):
                continue
            if gt.masks[k][vi, ui]:
                continue  # occluded in view k
            if frame.images[k][vi, ui] != frame.images[0][v, u]:
                ok = False
        if gt.masks[0][v, u]:
            continue  # reference itself occluded; background invisible
        assert ok, f"parallax inconsistency at ({u},{v})"
        done += 1


def check_gt_masks_match_footprints(trials, seed=71):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        spec = random_scene(rng, (48, 36))
        frame, gt = render_lightfield(spec, seed=int(rng.integers(1 << 30)))
        rig = spec.rig
        w, h = rig.image_size
        for k in range(len(rig)):
            expected = np.zeros((h, w), dtype=bool)
            rho = pixel_shift_ratio(rig, k)
            uu = np.arange(w, dtype=np.float64)
            for occ in spec.occluders:
                d = rig.reference.fx * rig.unit_baseline / occ.depth
                u0, v0, u1, v1 = occ.region
                p = occ.mask_pad
                xref = uu - rho * d
                cover_u = (xref >= u0 - p) & (xref < u1 + p)
                expected[max(v0 - p, 0) : v1 + p, cover_u] = True
            np.testing.assert_array_equal(gt.masks[k], expected)
            np.testing.assert_array_equal(frame.prob_masks[k] > 0, expected)


ALL_CHECKS = [
    ("rig: reprojection at the reference view is the identity", check_rig_reference_identity),
    ("rig: rectified warps shift u by alpha*d and keep v", check_rig_rectified_shift),
    ("rig: plane warp agrees with reprojection < 1e-6 px", check_rig_warp_agreement),
    ("rig: warp displacement is strictly increasing in d", check_rig_monotone_displacement),
    ("io: PFM round trip is lossless", check_pfm_round_trip),
    ("io: mask probabilities stay inside [0, 1]", check_mask_probabilities_bounded),
    ("segmentation: label refinement is a fixed point on consistent data", check_estep_fixed_point),
    ("segmentation: refinement picks the enumerated argmin with >= 1 static view", check_estep_picks_admissible_static),
    ("segmentation: refinement is idempotent for unchanged disparity", check_estep_idempotent),
    ("support: emitted points satisfy bounds and origin/label rules", check_support_point_contracts),
    ("support: triangulation covers the full image rectangle", check_triangulation_covers_rectangle),
    ("support: interpolated disparity is continuous across triangle edges", check_prior_mu_edge_continuity),
    ("support: accepted matches survive the reverse match within one step", check_match_left_right_consistency),
    ("disparity: MAP argmin is invariant to candidate evaluation order", check_map_order_invariance),
    ("disparity: variance at the true disparity beats far candidates on textured pixels", check_monotone_likelihood),
    ("disparity: intensity scaling scales variance by c^2, argmin unchanged", check_intensity_scaling),
    ("disparity: gap filling and median stay within the valid input range", check_postfilter_bounds),
    ("refocus: non-gap dynamic pixels are convex combinations of their rays", check_refocus_convex_bounds),
    ("refocus: gap mask equals zero-coverage union invalid disparity", check_refocus_gap_mask_definition),
    ("refocus: shrinking the dynamic region never lowers coverage", check_refocus_coverage_monotone),
    ("synth: rendered parallax matches ray reprojection", check_render_parallax_consistency),
    ("synth: ground-truth masks are pixel-exact with rendered footprints", check_gt_masks_match_footprints),
]
