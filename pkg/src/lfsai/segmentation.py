"""Binary static/dynamic labels: thresholding and disparity-guided refinement.

Upstream segmentation provides per-view probabilities of each pixel being
dynamic. Thresholding turns them into hard labels; the refinement step
(`refine_labels_estep`) revisits those labels once a disparity estimate
exists, by asking for each reference pixel which subset of its K warped rays
is photometrically consistent. For every reference pixel with valid
disparity it enumerates all 2^K - 1 ray labelings with at least one static
view and keeps the one minimizing

    beta * Var(descriptors over static views) - sum_k log p(S_k | prob_k)

with p(dynamic | prob) = prob sampled at the warped coordinate. Winning
labels are written back into the per-view maps (row-major, last writer
wins) so later refocusing sees the refined segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import CapabilityError, ParameterError
from .rig import CameraRig, reproject_points
from .sampling import nearest_indices

if TYPE_CHECKING:  # pragma: no cover
    from .io import DisparityRaster, LightFieldFrame
    from .support import DescriptorField

SOURCE_THRESHOLD = "threshold"
SOURCE_ESTEP = "estep"

# Probabilities are clamped before taking logs so hard 0/1 masks stay usable.
PROB_EPS = 1e-6

# 2^K assignments are enumerated per pixel; beyond this K the cost explodes.
MAX_ENUM_VIEWS = 16


@dataclass
class LabelMap:
    """Per-pixel binary labels for one view. True = dynamic."""

    dynamic: np.ndarray
    source: str = SOURCE_THRESHOLD

    @property
    def static(self) -> np.ndarray:
        return ~self.dynamic

    def copy(self) -> "LabelMap":
        return LabelMap(self.dynamic.copy(), self.source)


def threshold_labels(prob_mask: np.ndarray, tau: float) -> LabelMap:
    """Label a pixel dynamic iff P(dynamic) >= tau (boundary inclusive)."""
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {tau}")
    return LabelMap(dynamic=prob_mask >= tau, source=SOURCE_THRESHOLD)


def assignment_energy(
    descriptors: np.ndarray,
    probs: np.ndarray,
    members: Sequence[int],
    beta: float,
) -> float:
    """Energy of one ray labeling at one pixel (static views = ``members``).

    ``descriptors`` is (K, C), ``probs`` the per-view dynamic probabilities.
    Exposed for tests; the pipeline uses the vectorized path below.
    """
    members = list(members)
    sub = descriptors[members]
    mean = sub.mean(axis=0)
    var = float(np.sum((sub - mean) ** 2) / len(members))
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    prior = 0.0
    for k in range(len(probs)):
        prior -= np.log(1.0 - p[k]) if k in members else np.log(p[k])
    return beta * var + prior


def refine_labels_estep(
    frame: "LightFieldFrame",
    labels: Sequence[LabelMap],
    disparity_old: "DisparityRaster",
    descriptors: Sequence["DescriptorField"],
    rig: CameraRig,
    params,
) -> list[LabelMap]:
    """Re-estimate per-view labels given the current disparity.

    Pixels never touched by a warp keep their input labels. Ties between
    assignments are broken by the lowest assignment bitmask, which makes
    repeated runs with unchanged disparity idempotent.

    Raises:
        CapabilityError: K > 16 (enumeration bound).
    """
    n_views = len(rig)
    if n_views > MAX_ENUM_VIEWS:
        raise CapabilityError(
            f"label refinement enumerates 2^K assignments; K={n_views} exceeds {MAX_ENUM_VIEWS}"
        )
    h, w = frame.shape
    beta = params.beta

    flat_valid = np.flatnonzero(disparity_old.valid.ravel())  # row-major order
    out = [lm.copy() for lm in labels]
    for lm in out:
        lm.source = SOURCE_ESTEP
    if flat_valid.size == 0:
        return out

    vs0, us0 = np.divmod(flat_valid, w)
    us = us0.astype(np.float64)
    vs = vs0.astype(np.float64)
    ds = disparity_old.values.ravel()[flat_valid].astype(np.float64)
    n_px = flat_valid.size

    feats = []  # (P, C) per view
    usable = np.zeros((n_views, n_px), dtype=bool)
    neg_log_static = np.zeros((n_views, n_px))
    neg_log_dynamic = np.zeros((n_views, n_px))
    targets = []
    for k in range(n_views):
        wu, wv = reproject_points(rig, us, vs, ds, k)
        ui, vi, inb = nearest_indices(wu, wv, (h, w))
        desc = descriptors[k]
        usable[k] = inb & desc.valid[vi, ui]
        feats.append(desc.values[vi, ui].astype(np.float64))
        sp = np.clip(frame.prob_masks[k][vi, ui], PROB_EPS, 1.0 - PROB_EPS)
        neg_log_static[k] = -np.log(1.0 - sp)
        neg_log_dynamic[k] = -np.log(sp)
        targets.append((vi, ui))

    # Base cost: every usable view labeled dynamic. Making view k static
    # swaps its term, adding (neg_log_static - neg_log_dynamic).
    base_prior = np.where(usable, neg_log_dynamic, 0.0).sum(axis=0)

    best_energy = np.full(n_px, np.inf)
    best_mask = np.zeros(n_px, dtype=np.int64)
    for a in range(1, 1 << n_views):
        members = [k for k in range(n_views) if a >> k & 1]
        admissible = np.all(usable[members], axis=0)
        if not admissible.any():
            continue
        n = float(len(members))
        mean = feats[members[0]].copy()
        for k in members[1:]:
            mean += feats[k]
        mean /= n
        var = np.zeros(n_px)
        for k in members:
            var += np.sum((feats[k] - mean) ** 2, axis=1)
        var /= n
        prior = base_prior.copy()
        for k in members:
            prior += neg_log_static[k] - neg_log_dynamic[k]
        energy = np.where(admissible, beta * var + prior, np.inf)
        better = energy < best_energy
        best_energy[better] = energy[better]
        best_mask[better] = a

    decided = np.isfinite(best_energy)
    for k in range(n_views):
        vi, ui = targets[k]
        sel = usable[k] & decided
        if not sel.any():
            continue
        # Row-major flat_valid order makes the last writer deterministic.
        out[k].dynamic[vi[sel], ui[sel]] = (best_mask[sel] >> k & 1) == 0
    return out
