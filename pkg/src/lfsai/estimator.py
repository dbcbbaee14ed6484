"""Scikit-learn style front door for the whole per-frame computation.

``StaticBackgroundEstimator.fit`` consumes one light-field frame and runs
the full chain - thresholding, descriptors, support matching and recovery,
triangulation, MAP disparity, optional label-refinement iterations,
post-filtering and refocusing - leaving the results on trailing-underscore
attributes like a clustering estimator. ``get_params`` / ``set_params`` /
``clone`` work as usual, so configuration plumbing and grid sweeps compose
with the scikit-learn ecosystem.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator

from .disparity import (
    build_candidate_plan,
    fill_gaps,
    map_disparity,
    median_filter_disparity,
)
from .errors import MeshError
from .io import DisparityRaster, LightFieldFrame
from .params import EstimatorParams
from .refocus import synthesize_refocused
from .segmentation import refine_labels_estep, threshold_labels
from .support import (
    VARIANT_LIKELIHOOD,
    VARIANT_MATCH,
    build_triangulation,
    filter_support_points,
    match_support_grid,
    recover_occluded_support,
    sobel_descriptor_field,
)
from .rig import pixel_shift_ratio
from .validation import check_frame


class StaticBackgroundEstimator(BaseEstimator):
    """Joint static-background disparity estimation and refocusing.

    Parameters
    ----------
    seg_threshold : float, default 0.5
        Probability above which a pixel counts as dynamic (inclusive).
    em_iters : int, default 1
        Label-refinement iterations (each one re-runs the MAP search).
    beta : float, default 0.1
        Likelihood sharpness per squared Sobel-response unit.
    d_max : float, default 30.0
        Upper bound of the disparity search range.
    step : float or None, default None
        Candidate grid spacing; None derives 1 / max baseline ratio.
    min_static_views : int, default 2
        Static rays required before a candidate's variance is trusted.
    median_window : int, default 5
        Window of the speckle median filter (odd).
    grid_step : int, default 5
        Support-point sampling stride in pixels.
    ratio_threshold : float, default 0.9
        Best/second-best L1 ratio accepted during support matching.
    sigma, gamma : float, defaults 1.0 / 0.05
        Width of the Gaussian prior window and the uniform mixture weight.
    neighborhood_radius : float, default 20.0
        Radius for injecting nearby support disparities as candidates.
    dup_radius, consistency_window, consistency_delta : float
        Support-point filtering (duplicates / median-deviation outliers).
    prior_weight : float, default 1.0
        Scale on the log-prior term (0 gives the likelihood-only ablation).
    miss_penalty : float or None, default None
        Likelihood stand-in for candidates with too few static rays; None
        derives beta times the frame's 95th-percentile variance.
    n_workers : int, default 1
        Worker processes for the per-pixel stages (never changes results).
    refocus_color : bool, default False
        Refocus per color channel when the frame carries color planes.

    Attributes
    ----------
    labels_ : list of LabelMap            final per-view labels
    support_points_ : list of SupportPoint
    mesh_ : SupportMesh or None           None when triangulation failed
    disparity_raw_ : DisparityRaster      MAP output before post-processing
    disparity_ : DisparityRaster          after gap filling + median filter
    prior_mu_ : ndarray or None           coarse interpolated disparity map
    refocus_ : RefocusResult
    timings_ms_ : dict                    per-stage wall times
    """

    def __init__(
        self,
        seg_threshold: float = 0.5,
        em_iters: int = 1,
        beta: float = 0.1,
        d_max: float = 30.0,
        step: float | None = None,
        min_static_views: int = 2,
        median_window: int = 5,
        grid_step: int = 5,
        ratio_threshold: float = 0.9,
        sigma: float = 1.0,
        gamma: float = 0.05,
        neighborhood_radius: float = 20.0,
        dup_radius: float = 3.0,
        consistency_window: float = 20.0,
        consistency_delta: float = 5.0,
        prior_weight: float = 1.0,
        miss_penalty: float | None = None,
        n_workers: int = 1,
        refocus_color: bool = False,
    ):
        self.seg_threshold = seg_threshold
        self.em_iters = em_iters
        self.beta = beta
        self.d_max = d_max
        self.step = step
        self.min_static_views = min_static_views
        self.median_window = median_window
        self.grid_step = grid_step
        self.ratio_threshold = ratio_threshold
        self.sigma = sigma
        self.gamma = gamma
        self.neighborhood_radius = neighborhood_radius
        self.dup_radius = dup_radius
        self.consistency_window = consistency_window
        self.consistency_delta = consistency_delta
        self.prior_weight = prior_weight
        self.miss_penalty = miss_penalty
        self.n_workers = n_workers
        self.refocus_color = refocus_color

    def estimator_params(self) -> EstimatorParams:
        """Validated parameter bundle (raises ParameterError when invalid)."""
        return EstimatorParams(
            seg_threshold=self.seg_threshold,
            em_iters=self.em_iters,
            beta=self.beta,
            d_max=self.d_max,
            step=self.step,
            min_static_views=self.min_static_views,
            median_window=self.median_window,
            grid_step=self.grid_step,
            ratio_threshold=self.ratio_threshold,
            sigma=self.sigma,
            gamma=self.gamma,
            neighborhood_radius=self.neighborhood_radius,
            dup_radius=self.dup_radius,
            consistency_window=self.consistency_window,
            consistency_delta=self.consistency_delta,
            prior_weight=self.prior_weight,
            miss_penalty=self.miss_penalty,
            workers=self.n_workers,
        )

    def fit(self, frame: LightFieldFrame, y=None) -> "StaticBackgroundEstimator":
        """Run the full per-frame computation and store results on self."""
        frame = check_frame(frame)
        params = self.estimator_params()
        rig = frame.rig
        timings: dict[str, float] = {}

        def clock(name, fn, *args, **kwargs):
            t0 = time.perf_counter()
            out = fn(*args, **kwargs)
            timings[name] = timings.get(name, 0.0) + (time.perf_counter() - t0) * 1000.0
            return out

        labels = clock(
            "threshold",
            lambda: [threshold_labels(m, params.seg_threshold) for m in frame.prob_masks],
        )
        desc_match = clock(
            "descriptors",
            lambda: [sobel_descriptor_field(im, VARIANT_MATCH) for im in frame.images],
        )
        desc_like = clock(
            "descriptors",
            lambda: [sobel_descriptor_field(im, VARIANT_LIKELIHOOD) for im in frame.images],
        )

        def build_support():
            pts = match_support_grid(
                desc_match[0],
                desc_match[1],
                labels[0],
                params,
                pixel_shift_ratio(rig, 1),
                labels[1],
            )
            pts += recover_occluded_support(frame, labels, desc_match, rig, params)
            return filter_support_points(pts, params)

        points = clock("support", build_support)

        def triangulate():
            try:
                return build_triangulation(points, rig.image_size)
            except MeshError:
                return None  # uniform-prior fallback

        mesh = clock("triangulate", triangulate)

        grid = params.disparity_grid(rig)
        plan = clock("plan", build_candidate_plan, mesh, frame.shape, params, grid)
        disparity = clock(
            "map", map_disparity, frame, labels, rig, mesh, params,
            descriptors=desc_like, plan=plan,
        )
        raw = disparity
        post = None
        for _ in range(params.em_iters):
            post = clock("postprocess", self._postprocess, disparity, params)
            refined = clock(
                "estep",
                refine_labels_estep,
                frame,
                labels,
                post,
                desc_like,
                rig,
                params,
            )
            if all(np.array_equal(a.dynamic, b.dynamic) for a, b in zip(refined, labels)):
                labels = refined
                break  # fixed point: the post-processed raster stays valid
            labels = refined
            disparity = clock(
                "map", map_disparity, frame, labels, rig, mesh, params,
                descriptors=desc_like, plan=plan,
            )
            post = None
        if post is None:
            post = clock("postprocess", self._postprocess, disparity, params)
        disparity = post
        refocus = clock(
            "refocus", synthesize_refocused, frame, labels, rig, disparity,
            use_color=self.refocus_color,
        )

        self.n_views_ = len(rig)
        self.labels_ = labels
        self.support_points_ = points
        self.mesh_ = mesh
        self.prior_mu_ = None if plan.mu is None else plan.mu.reshape(frame.shape)
        self.disparity_raw_ = raw
        self.disparity_ = disparity
        self.refocus_ = refocus
        timings["depth_total"] = sum(
            timings.get(k, 0.0)
            for k in ("threshold", "descriptors", "support", "triangulate", "plan", "map", "estep", "postprocess")
        )
        self.timings_ms_ = timings
        return self

    @staticmethod
    def _postprocess(disparity: DisparityRaster, params: EstimatorParams) -> DisparityRaster:
        return median_filter_disparity(fill_gaps(disparity), params.median_window)

    def fit_transform(self, frame: LightFieldFrame, y=None) -> np.ndarray:
        """Fit on the frame and return the refocused static-background image."""
        return self.fit(frame).refocus_.image

    def transform(self, frame: LightFieldFrame) -> np.ndarray:
        """Per-frame application; equivalent to ``fit_transform`` (no state is reused)."""
        return self.fit_transform(frame)

    def predict(self, frame: LightFieldFrame) -> DisparityRaster:
        """Fit on the frame and return the post-processed disparity raster."""
        return self.fit(frame).disparity_
