"""Estimator parameters shared across pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .rig import CameraRig, baseline_ratio


@dataclass(frozen=True)
class EstimatorParams:
    """All tunables of the disparity + refocusing estimator.

    ``step`` is the candidate-grid spacing in disparity units; ``None``
    resolves to 1 / max(baseline ratio) so the widest-baseline view moves in
    whole-pixel increments between candidates. ``miss_penalty`` replaces the
    likelihood term of candidates with too few static rays; ``None`` derives
    it per frame as ``beta`` times the 95th-percentile variance.
    """

    seg_threshold: float = 0.5
    em_iters: int = 1
    beta: float = 0.1
    d_max: float = 30.0
    step: float | None = None
    min_static_views: int = 2
    median_window: int = 5
    grid_step: int = 5
    ratio_threshold: float = 0.9
    sigma: float = 1.0
    gamma: float = 0.05
    neighborhood_radius: float = 20.0
    dup_radius: float = 3.0
    consistency_window: float = 20.0
    consistency_delta: float = 5.0
    prior_weight: float = 1.0
    miss_penalty: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.seg_threshold < 1.0:
            raise ParameterError(f"seg_threshold must lie in (0, 1), got {self.seg_threshold}")
        if self.em_iters < 0:
            raise ParameterError(f"em_iters must be >= 0, got {self.em_iters}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not self.d_max > 0:
            raise ParameterError(f"d_max must be positive, got {self.d_max}")
        if self.step is not None and not self.step > 0:
            raise ParameterError(f"step must be positive, got {self.step}")
        if self.min_static_views < 1:
            raise ParameterError(f"min_static_views must be >= 1, got {self.min_static_views}")
        if self.median_window < 3 or self.median_window % 2 == 0:
            raise ParameterError(f"median_window must be odd and >= 3, got {self.median_window}")
        if self.grid_step < 1:
            raise ParameterError(f"grid_step must be >= 1, got {self.grid_step}")
        if not 0.0 < self.ratio_threshold <= 1.0:
            raise ParameterError(f"ratio_threshold must lie in (0, 1], got {self.ratio_threshold}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("neighborhood_radius", "dup_radius", "consistency_window", "consistency_delta"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.prior_weight < 0:
            raise ParameterError(f"prior_weight must be >= 0, got {self.prior_weight}")
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")

    def resolve_step(self, rig: CameraRig) -> float:
        if self.step is not None:
            return self.step
        alpha_max = max(baseline_ratio(rig, k) for k in range(len(rig)))
        if alpha_max <= 0:
            raise ParameterError("cannot derive a candidate step from a zero-baseline rig")
        return 1.0 / alpha_max

    def disparity_grid(self, rig: CameraRig) -> np.ndarray:
        """Global candidate grid {0, step, ..., <= d_max}, ascending."""
        step = self.resolve_step(rig)
        n = int(np.floor(self.d_max / step + 1e-9)) + 1
        return np.arange(n, dtype=np.float64) * step

    def with_overrides(self, **kwargs) -> "EstimatorParams":
        return replace(self, **kwargs)
