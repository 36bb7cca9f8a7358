"""Depth evaluation metrics and the multi-view consistency report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthmap import DegenerateMaskError, DepthMap
from .geometry import Intrinsics, Pose6
from .warp import warp_depth

METRIC_NAMES = ("delta1", "delta2", "delta3", "rel", "log10", "rms", "rms_log")


@dataclass
class MetricsReport:
    """The seven standard scalars. Deltas are accuracies (higher is better);
    the rest are errors (lower is better). rms_log uses natural logs."""

    delta1: float
    delta2: float
    delta3: float
    rel: float
    log10: float
    rms: float
    rms_log: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_lines(self) -> str:
        """Machine-readable line protocol: one ``name<TAB>value`` per line."""
        return "\n".join(f"{k}\t{v:.12g}" for k, v in self.as_dict().items())

    def to_text(self) -> str:
        """Flat key-value block for humans."""
        return "\n".join(f"{k} = {v:.6f}" for k, v in self.as_dict().items())


def evaluate(pred: DepthMap, gt: DepthMap) -> MetricsReport:
    """Compute all seven metrics over the intersection of validity masks."""
    if pred.values.shape != gt.values.shape:
        raise ValueError("prediction and ground truth shapes differ")
    both = pred.valid & gt.valid
    if not both.any():
        raise DegenerateMaskError("validity masks do not intersect")
    p = pred.values[both]
    g = gt.values[both]
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("compared depths must be strictly positive")

    ratio = np.maximum(p / g, g / p)
    diff = p - g
    log_diff = np.log(p) - np.log(g)
    return MetricsReport(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        rel=float(np.mean(np.abs(diff) / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rms=float(np.sqrt(np.mean(diff**2))),
        rms_log=float(np.sqrt(np.mean(log_diff**2))),
    )


def multiview_report(
    pred: DepthMap,
    gt: DepthMap,
    poses: list[Pose6],
    intrinsics: Intrinsics,
) -> list[MetricsReport | None]:
    """Evaluate prediction against ground truth warped into several views.

    View 0 is always the identity (prepended when the caller's first pose
    is not the zero pose). For each other view both maps are warped by the
    same pose and compared on the intersection of the warped masks. A view
    whose intersection is empty is reported as None rather than an error.
    """
    poses = list(poses)
    if not poses or not poses[0].is_zero():
        poses.insert(0, Pose6.zero())
    reports: list[MetricsReport | None] = []
    for pose in poses:
        if pose.is_zero():
            try:
                reports.append(evaluate(pred, gt))
            except DegenerateMaskError:
                reports.append(None)
            continue
        warped_pred = warp_depth(pred, pose, intrinsics).depth
        warped_gt = warp_depth(gt, pose, intrinsics).depth
        both = warped_pred.valid & warped_gt.valid
        if not both.any():
            reports.append(None)
            continue
        reports.append(
            evaluate(
                DepthMap(np.where(both, warped_pred.values, 0.0), both),
                DepthMap(np.where(both, warped_gt.values, 0.0), both),
            )
        )
    return reports


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Field-wise mean of several reports."""
    if not reports:
        raise ValueError("mean_report needs at least one report")
    return MetricsReport(
        **{
            name: float(np.mean([getattr(r, name) for r in reports]))
            for name in METRIC_NAMES
        }
    )
