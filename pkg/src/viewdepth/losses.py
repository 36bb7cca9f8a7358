"""Supervision signals, each masked by depth-map validity.

All losses take the prediction as a differentiable tensor and the ground
truth as a plain DepthMap; the effective pixel set is always the caller's
mask intersected with the ground truth's validity mask. Pixels outside the
effective mask cannot influence a loss value or its gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .depthmap import DEPTH_MAX, DEPTH_MIN, DegenerateMaskError, DepthMap

_LOSS_KINDS = ("l1", "berhu", "dorn")


@dataclass
class LossConfig:
    kind: str = "l1"
    lam: np.ndarray = field(default_factory=lambda: np.ones(6))
    dorn_bins: int = 40
    dorn_sharpness: float = 100.0

    def __post_init__(self) -> None:
        if self.kind not in _LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {_LOSS_KINDS}")
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.lam.shape != (6,) or np.any(self.lam < 0):
            raise ValueError("lambda must be 6 nonnegative weights")
        if self.dorn_bins < 2:
            raise ValueError("dorn_bins must be >= 2")
        if self.dorn_sharpness <= 0:
            raise ValueError("dorn_sharpness must be > 0")


def _effective_mask(gt: DepthMap, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.values.shape:
        raise ValueError("mask shape must match the ground-truth map")
    eff = mask & gt.valid
    if not eff.any():
        raise DegenerateMaskError("no valid pixels under the effective mask")
    return eff


def masked_l1_pair(pred: ad.Tensor, target: ad.Tensor, eff: np.ndarray) -> ad.Tensor:
    """Mean absolute difference of two tensors over an effective mask.

    ``target`` may itself be differentiable (the warped branch compares two
    maps that both depend on the warping pose)."""
    if not eff.any():
        raise DegenerateMaskError("no valid pixels under the effective mask")
    weights = eff / eff.sum()
    diff = ad.abs(ad.sub(pred, target))
    return ad.sum(ad.mul(diff, ad.constant(weights)))


def masked_l1(pred: ad.Tensor, gt: DepthMap, mask: np.ndarray) -> ad.Tensor:
    """Mean absolute error over ``mask & gt.valid``."""
    if pred.shape != gt.values.shape:
        raise ValueError("prediction shape must match the ground-truth map")
    eff = _effective_mask(gt, mask)
    return masked_l1_pair(pred, ad.constant(np.where(eff, gt.values, 0.0)), eff)


def masked_berhu_pair(pred: ad.Tensor, target: ad.Tensor, eff: np.ndarray) -> ad.Tensor:
    """Reverse Huber: |e| up to c, (e^2 + c^2) / 2c beyond, c = 0.2 max |e|.

    The threshold is computed from the current errors and treated as a
    constant in the gradient.
    """
    if not eff.any():
        raise DegenerateMaskError("no valid pixels under the effective mask")
    errors = np.where(eff, pred.data - target.data, 0.0)
    c = 0.2 * np.max(np.abs(errors))
    diff = ad.sub(pred, target)
    n = eff.sum()
    if c == 0.0:
        return ad.sum(ad.mul(ad.abs(diff), ad.constant(eff / n)))
    small = eff & (np.abs(errors) <= c)
    large = eff & ~small
    l1_part = ad.mul(ad.abs(diff), ad.constant(small / n))
    quad = ad.mul(ad.add(ad.mul(diff, diff), c * c), 1.0 / (2.0 * c))
    quad_part = ad.mul(quad, ad.constant(large / n))
    return ad.add(ad.sum(l1_part), ad.sum(quad_part))


def masked_berhu(pred: ad.Tensor, gt: DepthMap, mask: np.ndarray) -> ad.Tensor:
    """Reverse Huber against a ground-truth map over ``mask & gt.valid``."""
    if pred.shape != gt.values.shape:
        raise ValueError("prediction shape must match the ground-truth map")
    eff = _effective_mask(gt, mask)
    return masked_berhu_pair(pred, ad.constant(np.where(eff, gt.values, 0.0)), eff)


def _log_depth_ratio() -> float:
    return math.log(DEPTH_MAX / DEPTH_MIN)


def bin_index(depth_values: np.ndarray, bins: int) -> np.ndarray:
    """Ordinal target: how many of the ``bins`` classifiers should fire.

    Uniform in log-depth over the package depth range; the integer count k
    of a depth d satisfies decode(k) ~= d on the same schedule.
    """
    clipped = np.clip(depth_values, DEPTH_MIN, DEPTH_MAX)
    k = np.rint(bins * np.log(clipped / DEPTH_MIN) / _log_depth_ratio())
    return np.clip(k, 0, bins).astype(np.int64)


def dorn_soft_decode(probs: ad.Tensor, sharpness: float = 100.0) -> ad.Tensor:
    """Differentiable count-and-decode for ordinal depth classifiers.

    ``probs`` is (D, H, W) with 0.5 as each classifier's decision boundary;
    the soft count sum_i sigmoid(sharpness * (p_i - 0.5)) replaces hard
    thresholded counting, then the count maps to meters on the log-depth
    schedule (count 0 -> DEPTH_MIN, count D -> DEPTH_MAX).
    """
    if probs.ndim != 3:
        raise ValueError("expected (D, H, W) classifier outputs")
    bins = probs.shape[0]
    shifted = ad.mul(ad.sub(probs, 0.5), float(sharpness))
    count = ad.sum(ad.sigmoid(shifted), axis=0)
    log_depth = ad.add(ad.mul(count, _log_depth_ratio() / bins), math.log(DEPTH_MIN))
    return ad.exp(log_depth)


def dorn_loss(logits: ad.Tensor, gt: DepthMap, mask: np.ndarray) -> ad.Tensor:
    """Ordinal regression as D binary cross-entropies per masked pixel.

    For ground-truth count k: classifiers below k target 1, the rest 0.
    Mean over masked pixels of the per-pixel sum over classifiers.
    """
    if logits.ndim != 3 or logits.shape[1:] != gt.values.shape:
        raise ValueError("logits must be (D, H, W) matching the ground truth")
    eff = _effective_mask(gt, mask)
    bins = logits.shape[0]
    k = bin_index(np.where(eff, gt.values, DEPTH_MIN), bins)
    targets = (np.arange(bins)[:, None, None] < k[None]).astype(np.float64)
    n = eff.sum()
    x = logits.data
    # -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    per_element = np.logaddexp(0.0, (1.0 - 2.0 * targets) * x)
    value = np.sum(per_element * eff[None]) / n

    def backward_fn(g):
        probs = 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
        return ((probs - targets) * eff[None] * (g / n),)

    return ad.custom_op(np.float64(value), (logits,), backward_fn)


def adversarial_loss(l_warp: ad.Tensor, pose: ad.Tensor, lam: np.ndarray) -> ad.Tensor:
    """Pose-mining objective: negated warp loss plus quadratic pose penalty."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (6,):
        raise ValueError("lambda must have 6 components")
    penalty = ad.sum(ad.mul(ad.constant(lam), ad.mul(pose, pose)))
    return ad.add(ad.neg(l_warp), penalty)


def masked_loss(kind: str, pred: ad.Tensor, gt: DepthMap, mask: np.ndarray) -> ad.Tensor:
    """Dispatch for the dense-prediction losses (DORN is handled separately)."""
    if kind == "l1":
        return masked_l1(pred, gt, mask)
    if kind == "berhu":
        return masked_berhu(pred, gt, mask)
    raise ValueError(f"no dense masked loss of kind {kind!r}")


def masked_loss_pair(kind: str, pred: ad.Tensor, target: ad.Tensor,
                     eff: np.ndarray) -> ad.Tensor:
    if kind == "l1":
        return masked_l1_pair(pred, target, eff)
    if kind == "berhu":
        return masked_berhu_pair(pred, target, eff)
    raise ValueError(f"no dense masked loss of kind {kind!r}")
