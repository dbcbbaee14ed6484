"""Pipeline driver: ``lf run``, ``lf synth`` and ``lf eval`` subcommands.

``run`` processes every frame of a dataset through the estimator and writes
``disparity.pfm``, ``refocused.png``, ``coverage.png`` and per-view label
maps, printing per-stage wall times for each frame. ``synth`` renders a
synthetic dataset from a scene description; ``eval`` scores a result
directory against rendered ground truth.

Configuration is an INI document with a single ``[pipeline]`` section;
every key can also be given as a ``--key value`` flag (flags win over the
file). The ``LF_WORKERS`` environment variable overrides the configured
worker count (flags still win).
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, LfsaiError
from .estimator import StaticBackgroundEstimator
from .io import (
    DisparityRaster,
    FrameArtifacts,
    load_frame,
    read_disparity_pfm,
    read_image_gray,
    write_disparity_pfm,
    write_image_gray,
    write_image_u8,
)
from .refocus import coverage_to_u8
from .rig import load_calibration

_FLOAT_KEYS = (
    "seg_threshold", "beta", "d_max", "step", "ratio_threshold", "sigma", "gamma",
    "neighborhood_radius", "dup_radius", "consistency_window", "consistency_delta",
    "prior_weight", "miss_penalty",
)
_INT_KEYS = ("em_iters", "min_static_views", "median_window", "grid_step", "workers")
_BOOL_KEYS = ("skip_estep", "emit_intermediates", "refocus_color")
_PATH_KEYS = ("dataset", "output")


@dataclass
class PipelineConfig:
    """Everything ``lf run`` needs; numeric ranges are validated on build."""

    dataset: str
    output: str
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
    skip_estep: bool = False
    emit_intermediates: bool = False
    refocus_color: bool = False

    def __post_init__(self):
        try:
            self.make_estimator().estimator_params()
        except LfsaiError as exc:
            raise ConfigError(str(exc)) from exc

    def make_estimator(self) -> StaticBackgroundEstimator:
        return StaticBackgroundEstimator(
            seg_threshold=self.seg_threshold,
            em_iters=0 if self.skip_estep else self.em_iters,
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
            n_workers=self.workers,
            refocus_color=self.refocus_color,
        )


def _convert(key: str, raw: str):
    if key in _PATH_KEYS:
        return raw
    if key in _BOOL_KEYS:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key '{key}': expected a boolean, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            if raw.strip().lower() == "none":
                return None
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': {exc}") from exc
    raise ConfigError(f"unknown configuration key '{key}'")


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Parse the INI config document and apply flag overrides.

    Raises:
        ConfigError: unknown keys, bad values, missing dataset/output.
    """
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if parser.sections() != ["pipeline"]:
        raise ConfigError(
            f"config must contain exactly a [pipeline] section, got {parser.sections()}"
        )
    values: dict = {}
    for key, raw in parser["pipeline"].items():
        values[key] = _convert(key, raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown configuration key '{sorted(unknown)[0]}'")
    if "workers" not in (overrides or {}) or (overrides or {}).get("workers") is None:
        env = os.environ.get("LF_WORKERS")
        if env is not None:
            values["workers"] = _convert("workers", env)
    missing = [k for k in ("dataset", "output") if not values.get(k)]
    if missing:
        raise ConfigError(f"config is missing required key '{missing[0]}'")
    return PipelineConfig(**values)


def _frame_dirs(dataset: Path) -> list[Path]:
    dirs = [p for p in dataset.iterdir() if p.is_dir() and p.name.isdigit()]
    return sorted(dirs, key=lambda p: int(p.name))


def _support_overlay(estimator, shape) -> np.ndarray:
    """Support points splatted over a dimmed reference image, graded by disparity."""
    h, w = shape
    out = np.zeros((h, w), dtype=np.uint8)
    pts = estimator.support_points_
    if pts:
        dmax = max(p.d for p in pts) or 1.0
        for p in pts:
            val = 64 + int(191 * min(p.d / dmax, 1.0))
            out[max(p.v - 1, 0) : p.v + 2, max(p.u - 1, 0) : p.u + 2] = val
    return out


def cmd_run(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in [f.name for f in fields(PipelineConfig)]
        if hasattr(args, key)
    }
    config = load_config(args.config, overrides)

    dataset = Path(config.dataset)
    rig = load_calibration(dataset / "calib.txt")
    out_root = Path(config.output)
    out_root.mkdir(parents=True, exist_ok=True)

    frame_dirs = _frame_dirs(dataset)
    if not frame_dirs:
        print(f"error: no frame directories in {dataset}", file=sys.stderr)
        return 2

    failures = []
    totals: dict[str, float] = {}
    for frame_dir in frame_dirs:
        try:
            t0 = time.perf_counter()
            frame = load_frame(frame_dir, rig)
            load_ms = (time.perf_counter() - t0) * 1000.0

            est = config.make_estimator().fit(frame)

            t0 = time.perf_counter()
            art = FrameArtifacts(out_root / frame_dir.name)
            art.directory.mkdir(parents=True, exist_ok=True)
            write_disparity_pfm(est.disparity_, art.disparity)
            if est.refocus_.image.ndim == 3:
                write_image_u8(
                    np.floor(np.clip(est.refocus_.image, 0, 1) * 255.0 + 0.5), art.refocused
                )
            else:
                write_image_gray(est.refocus_.image, art.refocused)
            write_image_u8(coverage_to_u8(est.refocus_.coverage, est.n_views_), art.coverage)
            for k, lm in enumerate(est.labels_):
                write_image_u8(lm.dynamic.astype(np.uint8) * 255, art.labels(k))
            if config.emit_intermediates:
                write_image_u8(_support_overlay(est, frame.shape), art.directory / "support_points.png")
                if est.prior_mu_ is not None:
                    mu = DisparityRaster.from_values(
                        est.prior_mu_.astype(np.float32), np.ones(frame.shape, dtype=bool)
                    )
                    write_disparity_pfm(mu, art.directory / "prior_mu.pfm")
                write_disparity_pfm(est.disparity_raw_, art.directory / "disparity_raw.pfm")
            write_ms = (time.perf_counter() - t0) * 1000.0

            t = dict(est.timings_ms_)
            t["load"] = load_ms
            t["write"] = write_ms
            stage_line = " ".join(
                f"{k}={t[k]:.1f}ms"
                for k in ("load", "threshold", "descriptors", "support", "triangulate",
                          "plan", "map", "estep", "postprocess", "refocus", "write")
                if k in t
            )
            depth_ms = t.get("depth_total", 0.0)
            refocus_ms = t.get("refocus", 0.0)
            total_ms = load_ms + depth_ms + refocus_ms + write_ms
            print(f"frame {frame_dir.name}: {stage_line}")
            print(
                f"frame {frame_dir.name} timing: depth_map={depth_ms:.1f}ms "
                f"refocusing={refocus_ms:.1f}ms total={total_ms:.1f}ms"
            )
            for key, val in (("depth_map", depth_ms), ("refocusing", refocus_ms), ("total", total_ms)):
                totals[key] = totals.get(key, 0.0) + val
        except LfsaiError as exc:
            failures.append((frame_dir.name, str(exc)))
            print(f"frame {frame_dir.name}: FAILED ({exc})", file=sys.stderr)

    n_done = len(frame_dirs) - len(failures)
    if n_done:
        print(
            "average timing: "
            + " ".join(f"{k}={totals[k] / n_done:.1f}ms" for k in ("depth_map", "refocusing", "total"))
        )
    if failures:
        name, reason = failures[0]
        print(f"error: {len(failures)} frame(s) failed, first: frame {name}: {reason}", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    from .synth import load_scene, write_dataset

    spec = load_scene(args.spec)
    write_dataset(spec, args.out, n_frames=args.frames, seed=args.seed, sampling=args.sampling)
    print(f"wrote {args.frames} frame(s) to {args.out}")
    return 0


def _psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return float("nan")
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(1.0 / mse))


def evaluate_result(gt_dir, result_dir, step: float | None = None) -> dict:
    """Score one result frame directory against its ground-truth directory."""
    gt_dir, result_dir = Path(gt_dir), Path(result_dir)
    gt_disp = read_disparity_pfm(gt_dir / "gt_disparity.pfm")
    gt_bg, _ = read_image_gray(gt_dir / "gt_background.png")
    occluded, _ = read_image_gray(gt_dir / "mask_0.png")
    occluded = occluded > 0
    disp = read_disparity_pfm(result_dir / "disparity.pfm")
    refocused, _ = read_image_gray(result_dir / "refocused.png")
    coverage, _ = read_image_gray(result_dir / "coverage.png")

    if step is None:
        rig = load_calibration(gt_dir.parent / "calib.txt")
        from .params import EstimatorParams

        step = EstimatorParams().resolve_step(rig)

    both = gt_disp.valid & disp.valid
    err = np.abs(disp.values - gt_disp.values)
    bad = float(np.mean(err[both] > step)) if both.any() else float("nan")
    occ_both = both & occluded
    bad_occluded = float(np.mean(err[occ_both] > step)) if occ_both.any() else float("nan")
    gaps = coverage == 0.0
    return {
        "bad_pixel_rate": bad,
        "bad_pixel_rate_occluded": bad_occluded,
        "psnr_occluded_db": _psnr(refocused, gt_bg, occluded & ~gaps),
        "gap_fraction": float(gaps.mean()),
        "invalid_fraction": float(np.mean(~disp.valid)),
        "step": float(step),
    }


def cmd_eval(args) -> int:
    gt_root, result_root = Path(args.gt), Path(args.result)
    frame_dirs = _frame_dirs(gt_root)
    if not frame_dirs:
        print(f"error: no frame directories in {gt_root}", file=sys.stderr)
        return 2
    for frame_dir in frame_dirs:
        result_dir = result_root / frame_dir.name
        if not result_dir.exists():
            print(f"frame {frame_dir.name}: missing result directory", file=sys.stderr)
            return 1
        metrics = evaluate_result(frame_dir, result_dir, step=args.step)
        line = " ".join(
            f"{k}={metrics[k]:.4f}" if np.isfinite(metrics[k]) else f"{k}={metrics[k]}"
            for k in ("bad_pixel_rate", "bad_pixel_rate_occluded", "psnr_occluded_db",
                      "gap_fraction", "invalid_fraction")
        )
        print(f"frame {frame_dir.name}: {line}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lf", description="Static-background disparity estimation and refocusing"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="process a dataset")
    run.add_argument("--config", required=True, help="INI config with a [pipeline] section")
    run.add_argument("--dataset", help="dataset directory (overrides config)")
    run.add_argument("--output", help="output directory (overrides config)")
    for key in _FLOAT_KEYS:
        run.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    for key in _INT_KEYS:
        run.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    for key in _BOOL_KEYS:
        run.add_argument(
            f"--{key.replace('_', '-')}", dest=key, action="store_const", const=True
        )
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="render a synthetic dataset")
    synth.add_argument("--spec", required=True, help="scene description (YAML)")
    synth.add_argument("--out", required=True, help="output dataset directory")
    synth.add_argument("--frames", type=int, default=1)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--sampling", choices=("nearest", "bilinear"), default="nearest")
    synth.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="score results against ground truth")
    ev.add_argument("--gt", required=True, help="dataset directory with gt_* artifacts")
    ev.add_argument("--result", required=True, help="directory written by lf run")
    ev.add_argument("--step", type=float, default=None, help="disparity step for bad-pixel rate")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LfsaiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
