"""Zero-shot affine-invariant depth evaluation.

Predictions are aligned to the ground truth in disparity (inverse-depth)
space by closed-form least squares, floored before inversion, and scored
in depth space with AbsRel, delta-1 accuracy, and RMSE.  Per-sample
metrics aggregate by unweighted arithmetic mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .losses import align_lsq
from .raster import DepthMap, DisparityMap, depth_to_disparity

__all__ = [
    "EvalConfig",
    "SampleMetrics",
    "Report",
    "absrel",
    "delta1",
    "rmse",
    "evaluate_sample",
    "aggregate",
    "report_to_dict",
    "write_report_json",
    "write_report_csv",
]


@dataclass(frozen=True)
class EvalConfig:
    delta_threshold: float = 1.25
    min_disparity: float = 1e-6  # floor applied to the aligned prediction before inversion
    max_depth: float | None = None

    def __post_init__(self):
        if not self.delta_threshold > 1.0:
            raise ValueError(f"delta threshold must exceed 1, got {self.delta_threshold}")
        if not self.min_disparity > 0.0:
            raise ValueError("min_disparity must be positive")
        if self.max_depth is not None and self.max_depth <= 0.0:
            raise ValueError("max_depth must be positive when set")


@dataclass(frozen=True)
class SampleMetrics:
    sample_id: str
    absrel: float
    delta1: float
    rmse: float
    valid_pixels: int


@dataclass(frozen=True)
class Report:
    samples: tuple[SampleMetrics, ...]
    aggregate: dict
    config: EvalConfig
    version: str


def _joint_valid(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.values.shape != gt.values.shape:
        raise ValueError(f"depth map dimensions differ: {pred.values.shape} vs {gt.values.shape}")
    joint = pred.valid & gt.valid
    if not joint.any():
        raise ValueError("no jointly valid pixels")
    return joint


def absrel(pred: DepthMap, gt: DepthMap) -> float:
    """Mean of |pred - gt| / gt over jointly valid pixels."""
    joint = _joint_valid(pred, gt)
    p = pred.values[joint]
    g = gt.values[joint]
    return float(np.mean(np.abs(p - g) / g))


def delta1(pred: DepthMap, gt: DepthMap, threshold: float = 1.25) -> float:
    """Fraction of jointly valid pixels with max(pred/gt, gt/pred) < threshold."""
    joint = _joint_valid(pred, gt)
    p = pred.values[joint]
    g = gt.values[joint]
    ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < threshold))


def rmse(pred: DepthMap, gt: DepthMap) -> float:
    """Root-mean-square depth error over jointly valid pixels."""
    joint = _joint_valid(pred, gt)
    diff = pred.values[joint] - gt.values[joint]
    return float(np.sqrt(np.mean(diff * diff)))


def evaluate_sample(pred_disp: DisparityMap, gt_depth: DepthMap,
                    cfg: EvalConfig = EvalConfig(), sample_id: str = "") -> SampleMetrics:
    """Align a disparity prediction to ground truth and score it in depth space.

    The optional max_depth cap removes pixels whose ground truth exceeds it
    from the valid set before alignment.
    """
    if pred_disp.values.shape != gt_depth.values.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    valid = pred_disp.valid & gt_depth.valid
    if cfg.max_depth is not None:
        valid = valid & (gt_depth.values <= cfg.max_depth)
    if not valid.any():
        raise ValueError("no jointly valid pixels after capping")

    gt_capped = DepthMap(np.where(valid, gt_depth.values, 0.0), valid)
    gt_disp = depth_to_disparity(gt_capped)
    pred_masked = DisparityMap(np.where(valid, pred_disp.values, 0.0), valid)
    s, t = align_lsq(pred_masked, gt_disp)
    aligned = np.maximum(s * pred_disp.values + t, cfg.min_disparity)
    pred_depth = DepthMap(np.where(valid, 1.0 / aligned, 0.0), valid)

    return SampleMetrics(
        sample_id=sample_id,
        absrel=absrel(pred_depth, gt_capped),
        delta1=delta1(pred_depth, gt_capped, cfg.delta_threshold),
        rmse=rmse(pred_depth, gt_capped),
        valid_pixels=int(valid.sum()),
    )


def aggregate(samples: list[SampleMetrics], cfg: EvalConfig = EvalConfig()) -> Report:
    """Unweighted arithmetic means over samples, ordered by sample id."""
    if not samples:
        raise ValueError("cannot aggregate an empty sample list")
    ordered = tuple(sorted(samples, key=lambda s: s.sample_id))
    means = {
        "absrel": float(np.mean([s.absrel for s in ordered])),
        "delta1": float(np.mean([s.delta1 for s in ordered])),
        "rmse": float(np.mean([s.rmse for s in ordered])),
    }
    return Report(samples=ordered, aggregate=means, config=cfg, version=__version__)


def report_to_dict(report: Report) -> dict:
    return {
        "config": asdict(report.config),
        "samples": [asdict(s) for s in report.samples],
        "aggregate": report.aggregate,
        "version": report.version,
    }


def write_report_json(report: Report, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2)
        f.write("\n")


def write_report_csv(report: Report, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "absrel", "delta1", "rmse", "valid_pixels"])
        for s in report.samples:
            writer.writerow([s.sample_id, repr(s.absrel), repr(s.delta1),
                             repr(s.rmse), s.valid_pixels])
