"""Sparse support points and the piecewise-planar disparity prior.

The prior is built in five steps, all on the reference view's disparity
scale:

1. Sobel descriptor fields per view (a 16-entry neighbourhood descriptor for
   matching, a 2-entry one for the photometric likelihood).
2. Grid matching of static reference pixels against the adjacent view.
3. Recovery of support points hidden behind dynamic objects in the
   reference view: grid matching inside the other views, reprojected back
   onto dynamic reference pixels.
4. Duplicate and consistency filtering.
5. Delaunay triangulation, corner-anchored so every pixel lies in a
   triangle, interpolating a coarse disparity everywhere.

Sobel responses are computed in 8-bit intensity units (image * 255) so that
variance magnitudes, and with them the default likelihood sharpness, match
what byte-image stereo matchers produce.

Matching searches integer pixel shifts along horizontal epipolar lines, the
exact geometry for rectified identity-rotation rigs (the general warp is
used everywhere a disparity candidate is evaluated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import FrameError, MeshError
from .params import EstimatorParams
from .rig import CameraRig, pixel_shift_ratio
from .sampling import round_half_up
from .segmentation import LabelMap

VARIANT_MATCH = "match"
VARIANT_LIKELIHOOD = "likelihood"

# Neighbourhood sampling pattern of the matching descriptor, ELAS-style:
# horizontal responses at 12 offsets (center twice) and vertical at 4,
# all inside a 5x5 window. Offsets are (dv, du).
DU_OFFSETS = [
    (-2, 0),
    (-1, -2), (-1, 0), (-1, 2),
    (0, -1), (0, 0), (0, 0), (0, 1),
    (1, -2), (1, 0), (1, 2),
    (2, 0),
]
DV_OFFSETS = [(-1, 0), (0, -1), (0, 1), (1, 0)]

MATCH_MARGIN = 3  # 5x5 sampling of 3x3 responses: combined 7x7 footprint
LIKELIHOOD_MARGIN = 1

ORIGIN_REFERENCE = "reference"
ORIGIN_RECOVERED = "recovered"
ORIGIN_ANCHOR = "anchor"

INTENSITY_SCALE = 255.0


@dataclass(frozen=True)
class DescriptorField:
    """Per-pixel descriptor vectors with a validity mask.

    Border pixels whose sampling window exits the image are invalid.
    """

    values: np.ndarray  # (H, W, C)
    valid: np.ndarray  # (H, W)
    variant: str


@dataclass(frozen=True)
class SupportPoint:
    u: int
    v: int
    d: float
    origin: str = ORIGIN_REFERENCE
    view: int = 0


def _sobel_responses(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel responses with replicate borders, in 8-bit intensity units."""
    img = np.asarray(image, dtype=np.float64) * INTENSITY_SCALE
    p = np.pad(img, 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    return gx, gy


def sobel_descriptor_field(image: np.ndarray, variant: str) -> DescriptorField:
    """Build the MATCH (16-entry) or LIKELIHOOD (2-entry) descriptor field.

    Raises:
        FrameError: image smaller than 7x7.
    """
    h, w = image.shape
    if h < 7 or w < 7:
        raise FrameError(f"image must be at least 7x7 for descriptors, got {w}x{h}")
    gx, gy = _sobel_responses(image)
    valid = np.zeros((h, w), dtype=bool)
    if variant == VARIANT_LIKELIHOOD:
        m = LIKELIHOOD_MARGIN
        values = np.stack([gx, gy], axis=-1)
    elif variant == VARIANT_MATCH:
        # float32: matching only compares L1 costs, nothing downstream
        # depends on these values bit for bit (unlike the likelihood field).
        m = MATCH_MARGIN
        gxp = np.pad(gx, 2, mode="edge")
        gyp = np.pad(gy, 2, mode="edge")
        values = np.empty((h, w, 16), dtype=np.float32)
        for i, (dv, du) in enumerate(DU_OFFSETS):
            values[..., i] = gxp[2 + dv : 2 + dv + h, 2 + du : 2 + du + w]
        for i, (dv, du) in enumerate(DV_OFFSETS):
            values[..., len(DU_OFFSETS) + i] = gyp[2 + dv : 2 + dv + h, 2 + du : 2 + du + w]
    else:
        raise ValueError(f"unknown descriptor variant {variant!r}")
    valid[m : h - m, m : w - m] = True
    return DescriptorField(values=values, valid=valid, variant=variant)


def _grid_coords(shape: tuple[int, int], grid_step: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    m = MATCH_MARGIN
    us = np.arange(0, w, grid_step)
    vs = np.arange(0, h, grid_step)
    us = us[(us >= m) & (us < w - m)]
    vs = vs[(vs >= m) & (vs < h - m)]
    uu, vv = np.meshgrid(us, vs)
    return uu.ravel(), vv.ravel()


def _match_grid_pair(
    descr_a: DescriptorField,
    descr_b: DescriptorField,
    static_a: np.ndarray,
    static_b: np.ndarray,
    shift_per_d: float,
    params: EstimatorParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Match grid pixels of image a along the epipolar shift into image b.

    Returns accepted (u, v, d) arrays. Candidates are integer pixel shifts
    s = 0 .. |shift_per_d| * d_max landing on static pixels of b (static
    background gets matched against static background only); acceptance
    needs the best/second-best L1 ratio below the threshold and a reverse
    match within one shift.
    """
    h, w = static_a.shape
    u0, v0 = _grid_coords((h, w), params.grid_step)
    keep = static_a[v0, u0] & descr_a.valid[v0, u0]
    u0, v0 = u0[keep], v0[keep]
    if u0.size == 0 or abs(shift_per_d) < 1e-12:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)

    direction = 1 if shift_per_d > 0 else -1
    smax = int(math.floor(abs(shift_per_d) * params.d_max + 1e-9))
    fa = descr_a.values[v0, u0]  # (n, C)

    costs = np.full((u0.size, smax + 1), np.inf)
    for s in range(smax + 1):
        ub = u0 + direction * s
        ok = (ub >= 0) & (ub < w)
        ubc = np.clip(ub, 0, w - 1)
        ok &= descr_b.valid[v0, ubc] & static_b[v0, ubc]
        if not ok.any():
            continue
        diff = np.sum(np.abs(fa - descr_b.values[v0, ubc]), axis=1)
        costs[:, s] = np.where(ok, diff, np.inf)

    best_s = np.argmin(costs, axis=1)
    best_cost = costs[np.arange(u0.size), best_s]
    masked = costs.copy()
    masked[np.arange(u0.size), best_s] = np.inf
    second_cost = masked.min(axis=1)
    accepted = np.isfinite(best_cost) & (best_cost < params.ratio_threshold * second_cost)
    if not accepted.any():
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)

    u0, v0, best_s = u0[accepted], v0[accepted], best_s[accepted]
    # Reverse check: from the matched pixel in b, search back into a.
    ub = u0 + direction * best_s
    fb = descr_b.values[v0, ub]
    rev_costs = np.full((u0.size, smax + 1), np.inf)
    for s in range(smax + 1):
        ua = ub - direction * s
        ok = (ua >= 0) & (ua < w)
        uac = np.clip(ua, 0, w - 1)
        ok &= descr_a.valid[v0, uac] & static_a[v0, uac]
        if not ok.any():
            continue
        diff = np.sum(np.abs(fb - descr_a.values[v0, uac]), axis=1)
        rev_costs[:, s] = np.where(ok, diff, np.inf)
    rev_s = np.argmin(rev_costs, axis=1)
    consistent = np.abs(rev_s - best_s) <= 1
    u0, v0, best_s = u0[consistent], v0[consistent], best_s[consistent]
    return u0, v0, best_s / abs(shift_per_d)


def match_support_grid(
    ref_descr: DescriptorField,
    neighbor_descr: DescriptorField,
    ref_labels: LabelMap,
    params: EstimatorParams,
    shift_per_d: float,
    neighbor_labels: LabelMap | None = None,
) -> list[SupportPoint]:
    """Match static reference grid pixels against the adjacent view.

    ``shift_per_d`` is the signed pixel shift of the neighbour view per unit
    disparity (see :func:`lfsai.rig.pixel_shift_ratio`). When the
    neighbour's labels are given, candidate targets inside its dynamic
    regions are skipped.
    """
    static_b = (
        neighbor_labels.static
        if neighbor_labels is not None
        else np.ones_like(ref_labels.static)
    )
    us, vs, ds = _match_grid_pair(
        ref_descr, neighbor_descr, ref_labels.static, static_b, shift_per_d, params
    )
    return [
        SupportPoint(int(u), int(v), float(d), ORIGIN_REFERENCE, view=0)
        for u, v, d in zip(us, vs, ds)
    ]


def recover_occluded_support(
    frame,
    labels: Sequence[LabelMap],
    descriptors: Sequence[DescriptorField],
    rig: CameraRig,
    params: EstimatorParams,
) -> list[SupportPoint]:
    """Find static background points hidden behind dynamic objects in the reference.

    Every non-reference view k is grid-matched against its inward neighbour
    k-1 (restricted to pixels static in view k); matches are converted to
    unit-baseline disparity and reprojected into the reference view, and
    only those landing on dynamic reference pixels are kept.
    """
    h, w = labels[0].dynamic.shape
    ref_dynamic = labels[rig.reference_index].dynamic
    rhos = [pixel_shift_ratio(rig, k) for k in range(len(rig))]
    out: list[SupportPoint] = []
    for k in range(1, len(rig)):
        shift = rhos[k - 1] - rhos[k]
        us, vs, ds = _match_grid_pair(
            descriptors[k], descriptors[k - 1], labels[k].static, labels[k - 1].static, shift, params
        )
        if us.size == 0:
            continue
        uref = round_half_up(us - rhos[k] * ds).astype(np.int64)
        inb = (uref >= 0) & (uref < w)
        for u, v, d in zip(uref[inb], vs[inb], ds[inb]):
            if ref_dynamic[v, u]:
                out.append(SupportPoint(int(u), int(v), float(d), ORIGIN_RECOVERED, view=k))
    return out


def _components(n: int, pairs) -> list[list[int]]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def filter_support_points(
    points: Sequence[SupportPoint], params: EstimatorParams
) -> list[SupportPoint]:
    """Deduplicate nearby points and drop disparity outliers.

    Stage 1 keeps one point per cluster of mutual neighbours within
    ``dup_radius`` (preferring reference origin, then the lowest disparity
    spread against the cluster, then row-major order). Stage 2 removes
    points whose disparity deviates from the median of their neighbours
    within ``consistency_window`` by more than ``consistency_delta``;
    isolated points are kept.
    """
    pts = list(points)
    if not pts:
        return []
    coords = np.array([[p.u, p.v] for p in pts], dtype=np.float64)
    ds = np.array([p.d for p in pts])

    tree = cKDTree(coords)
    survivors: list[int] = []
    for comp in _components(len(pts), tree.query_pairs(params.dup_radius)):
        if len(comp) == 1:
            survivors.append(comp[0])
            continue
        comp_d = ds[comp]

        def rank(i):
            p = pts[i]
            spread = float(np.sum((comp_d - p.d) ** 2))
            return (0 if p.origin == ORIGIN_REFERENCE else 1, spread, p.v, p.u)

        survivors.append(min(comp, key=rank))
    survivors.sort()

    coords = coords[survivors]
    ds = ds[survivors]
    tree = cKDTree(coords)
    keep = np.ones(len(survivors), dtype=bool)
    for i, neigh in enumerate(tree.query_ball_point(coords, params.consistency_window)):
        others = [j for j in neigh if j != i]
        if others and abs(ds[i] - float(np.median(ds[others]))) > params.consistency_delta:
            keep[i] = False
    return [pts[survivors[i]] for i in range(len(survivors)) if keep[i]]


BARY_TOL = 1e-9


@dataclass
class SupportMesh:
    """Delaunay triangulation over support points (+ corner anchors)."""

    points: list[SupportPoint]
    triangles: np.ndarray  # (T, 3) indices into points
    vertex_uv: np.ndarray  # (N, 2)
    vertex_d: np.ndarray  # (N,)
    _delaunay: Delaunay
    _support_tree: cKDTree
    _support_d: np.ndarray
    _incidence: np.ndarray | None = None  # (N, max_degree) simplex ids, -1 padded

    def _vertex_incidence(self) -> np.ndarray:
        if self._incidence is None:
            tri = self._delaunay.simplices
            n_verts = self.vertex_uv.shape[0]
            lists: list[list[int]] = [[] for _ in range(n_verts)]
            for s, verts in enumerate(tri):
                for v in verts:
                    lists[v].append(s)
            width = max(len(l) for l in lists)
            inc = np.full((n_verts, width), -1, dtype=np.int64)
            for v, l in enumerate(lists):
                inc[v, : len(l)] = l
            self._incidence = inc
        return self._incidence

    def interpolate(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Barycentric disparity interpolation at (possibly many) pixels.

        The directed simplex search resolves points on triangle edges to an
        arbitrary containing simplex depending on query batching, which
        perturbs the last float bits of the result. Such points are
        re-resolved to the lowest-index containing simplex among all
        simplices incident to the hit's vertices (a superset of every
        simplex containing the point), so the value is batch-independent.
        """
        pts = np.column_stack([np.asarray(us, dtype=np.float64).ravel(),
                               np.asarray(vs, dtype=np.float64).ravel()])
        delaunay = self._delaunay
        simplices = delaunay.find_simplex(pts)

        def barycentric(simp, p):
            trans = delaunay.transform[simp]
            b12 = np.einsum("...ij,...j->...i", trans[..., :2, :], p - trans[..., 2, :])
            return np.concatenate(
                [b12, 1.0 - b12.sum(axis=-1, keepdims=True)], axis=-1
            )

        bary = barycentric(np.maximum(simplices, 0), pts)
        redo = (simplices < 0) | (bary.min(axis=1) < BARY_TOL)
        if redo.any():
            ridx = np.flatnonzero(redo)
            lost = ridx[simplices[ridx] < 0]
            if lost.size:
                found = delaunay.find_simplex(pts[lost], tol=BARY_TOL)
                if (found < 0).any():
                    raise MeshError("pixel outside the triangulated image rectangle")
                simplices[lost] = found
                bary[lost] = barycentric(found, pts[lost])
            rbary = bary[ridx]
            hit = simplices[ridx]
            order = np.argsort(rbary, axis=1)
            second_smallest = np.take_along_axis(rbary, order[:, 1:2], axis=1)[:, 0]

            # Edge tie: both the hit simplex and the neighbour across the
            # tied edge contain the point; pick the smaller index.
            across = delaunay.neighbors[hit, order[:, 0]]
            edge_choice = np.where(across >= 0, np.minimum(hit, across), hit)

            # Vertex tie (point at a vertex): lowest-index containing
            # simplex in that vertex's full fan.
            at_vertex = second_smallest < BARY_TOL
            chosen = edge_choice
            if at_vertex.any():
                vidx = np.flatnonzero(at_vertex)
                inc = self._vertex_incidence()
                near_vert = np.take_along_axis(
                    delaunay.simplices[hit[vidx]], order[vidx, 2:3], axis=1
                )[:, 0]
                fans = inc[near_vert]  # (m, width)
                fan_bary = barycentric(np.maximum(fans, 0), pts[ridx][vidx][:, None, :])
                inside = (fans >= 0) & (fan_bary.min(axis=-1) >= -BARY_TOL)
                masked = np.where(inside, fans, np.iinfo(np.int64).max)
                best = masked.min(axis=1)
                ok = best < np.iinfo(np.int64).max
                chosen = chosen.copy()
                chosen[vidx[ok]] = best[ok]  # fall back to edge choice otherwise
            simplices[ridx] = chosen
            bary[ridx] = barycentric(chosen, pts[ridx])
        verts = delaunay.simplices[simplices]
        mu = np.sum(bary * self.vertex_d[verts], axis=1)
        return mu.reshape(np.shape(us))

    def neighborhood_disparities(self, u: float, v: float, radius: float) -> np.ndarray:
        """Disparities of (non-anchor) support points within ``radius`` pixels."""
        idx = self._support_tree.query_ball_point([float(u), float(v)], radius)
        return self._support_d[idx]


def build_triangulation(
    points: Sequence[SupportPoint], image_size: tuple[int, int]
) -> SupportMesh:
    """Triangulate support points, anchored at the four image corners.

    Corner anchors take the disparity of the nearest support point, so the
    triangulation covers every pixel of the image rectangle. Input points
    are sorted lexicographically first, which makes the triangulation a
    pure function of the point set (co-circular ties resolve identically
    for identical sets).

    Raises:
        MeshError: fewer than 3 support points.
    """
    pts = sorted(points, key=lambda p: (p.u, p.v, p.d, p.origin, p.view))
    if len(pts) < 3:
        raise MeshError(f"triangulation needs at least 3 support points, got {len(pts)}")
    w, h = image_size
    support_uv = np.array([[p.u, p.v] for p in pts], dtype=np.float64)
    support_d = np.array([p.d for p in pts])
    tree = cKDTree(support_uv)
    occupied = {(p.u, p.v) for p in pts}
    anchored = list(pts)
    n_near = min(5, len(pts))  # median of a few neighbours, robust to one outlier
    for cu, cv in ((0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)):
        if (cu, cv) in occupied:
            continue
        _, nearest = tree.query([float(cu), float(cv)], k=n_near)
        anchor_d = float(np.median(support_d[np.atleast_1d(nearest)]))
        anchored.append(SupportPoint(cu, cv, anchor_d, ORIGIN_ANCHOR))

    uv = np.array([[p.u, p.v] for p in anchored], dtype=np.float64)
    dvals = np.array([p.d for p in anchored])
    try:
        delaunay = Delaunay(uv)
    except Exception as exc:  # qhull degeneracies (collinear input, ...)
        raise MeshError(f"triangulation failed: {exc}") from exc

    # Guard against degenerate slivers slipping through qhull.
    tri = delaunay.simplices
    a, b, c = uv[tri[:, 0]], uv[tri[:, 1]], uv[tri[:, 2]]
    area2 = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    triangles = tri[area2 > 0]

    return SupportMesh(
        points=anchored,
        triangles=triangles,
        vertex_uv=uv,
        vertex_d=dvals,
        _delaunay=delaunay,
        _support_tree=tree,
        _support_d=support_d,
    )


@dataclass(frozen=True)
class PriorDistribution:
    """Discrete disparity prior at one pixel: candidates with probabilities."""

    mu: float
    candidates: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        assert np.all(np.diff(self.candidates) > 0), "candidates must be sorted unique"


def window_bounds(mu: float, sigma: float, grid: np.ndarray):
    """Gaussian window [mu - 3 sigma, mu + 3 sigma] as grid slice bounds.

    Shared verbatim by the per-pixel prior and the vectorized planner so
    boundary comparisons agree bit for bit.
    """
    wlo = mu - 3.0 * sigma
    whi = mu + 3.0 * sigma
    lo = int(np.searchsorted(grid, wlo, side="left"))
    hi = int(np.searchsorted(grid, whi, side="right"))
    return wlo, whi, lo, hi


def mixture_log_probs(
    cands: np.ndarray, mu: float, wlo: float, whi: float, sigma: float,
    gamma: float, grid_size: int,
):
    """Unnormalized mixture probabilities and their normalizer.

    The normalizer reduces the ascending candidate array with numpy's add
    reduction; the vectorized planner reproduces the identical association
    via ``np.add.reduceat`` over contiguous segments, keeping per-pixel
    priors bit-identical between the two paths.
    """
    in_window = (cands >= wlo) & (cands <= whi)
    probs = gamma / grid_size + in_window * (1.0 - gamma) * np.exp(
        -((cands - mu) ** 2) / (2.0 * sigma * sigma)
    )
    return probs, float(np.add.reduce(probs))


def prior_distribution_at(
    mesh: SupportMesh,
    pixel: tuple[float, float],
    params: EstimatorParams,
    grid: np.ndarray,
) -> PriorDistribution:
    """Disparity prior at one pixel: sampled Gaussian around the interpolated
    disparity on a uniform floor, plus the exact disparities of nearby
    support points.

    ``grid`` is the global candidate grid (see
    :meth:`EstimatorParams.disparity_grid`). Probabilities are normalized
    over the emitted candidate set.
    """
    u, v = pixel
    mu = float(mesh.interpolate(np.array([u]), np.array([v]))[0])
    wlo, whi, lo, hi = window_bounds(mu, params.sigma, grid)
    injected = mesh.neighborhood_disparities(u, v, params.neighborhood_radius)
    cands = np.unique(np.concatenate([grid[lo:hi], injected]))
    probs, z = mixture_log_probs(cands, mu, wlo, whi, params.sigma, params.gamma, grid.size)
    return PriorDistribution(mu=mu, candidates=cands, probs=probs / z)
