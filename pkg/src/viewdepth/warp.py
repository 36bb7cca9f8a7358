"""Differentiable forward warping of depth maps.

Every valid source pixel is lifted through its center at its stored depth,
rigidly transformed, re-projected, and splatted into the target grid. The
target pixel for a continuous coordinate (x, y) is (floor(x), floor(y));
when several points land in the same pixel the smallest depth wins (nearest
surface occludes) with ties broken by the lowest source row-major index.
Target pixels that receive nothing are marked invalid.

Gradients flow only through the winning point of each valid target pixel:
the stored depth is an analytic function of the winner's source depth and
of the pose, while the floor-based pixel assignment is treated as locally
constant (zero gradient through pixel coordinates).

Pixel (row j, column i) has center (i + 0.5, j + 0.5); the synthetic
renderer casts rays through the same centers, which is what makes it a
valid oracle for this operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .depthmap import DepthMap
from .geometry import Intrinsics, Pose6, pose_to_transform, rotation_derivatives


@dataclass
class WarpResult:
    """Warped depth map plus, per valid target pixel, the winning source index.

    ``hit_source`` holds flat row-major source indices, -1 where the target
    pixel received no point.
    """

    depth: DepthMap
    hit_source: np.ndarray


def _source_rays(source: DepthMap, intrinsics: Intrinsics):
    """Per valid source pixel: flat index, unit-z ray, and depth."""
    rows, cols = np.nonzero(source.valid)
    flat = rows * source.width + cols
    u = cols + 0.5
    v = rows + 0.5
    rays = np.stack(
        [
            (u - intrinsics.cx) / intrinsics.fx,
            (v - intrinsics.cy) / intrinsics.fy,
            np.ones_like(u),
        ]
    )
    return flat, rays, source.values[rows, cols]


def warp_depth(source: DepthMap, pose: Pose6, intrinsics: Intrinsics) -> WarpResult:
    """Warp a depth map into the view reached by the given pose.

    Points that end up behind the camera or outside the target grid are
    silently dropped; an all-invalid result is legal and signaled through
    the validity mask.
    """
    if not isinstance(source, DepthMap):
        raise ValueError("source must be a DepthMap")
    h, w = source.height, source.width
    transform = pose_to_transform(pose)

    out_values = np.zeros((h, w))
    out_valid = np.zeros((h, w), dtype=bool)
    hit_source = np.full((h, w), -1, dtype=np.int64)

    flat, rays, depths = _source_rays(source, intrinsics)
    if flat.size == 0:
        return WarpResult(DepthMap(out_values, out_valid), hit_source)

    moved = transform.rotation @ (rays * depths) + transform.translation[:, None]
    in_front = moved[2] > 0.0
    flat, moved = flat[in_front], moved[:, in_front]

    xt = intrinsics.fx * moved[0] / moved[2] + intrinsics.cx
    yt = intrinsics.fy * moved[1] / moved[2] + intrinsics.cy
    it = np.floor(xt).astype(np.int64)
    jt = np.floor(yt).astype(np.int64)
    inside = (it >= 0) & (it < w) & (jt >= 0) & (jt < h)
    flat, zt = flat[inside], moved[2][inside]
    target = jt[inside] * w + it[inside]

    if flat.size:
        # group by target pixel, then depth, then source index: the first
        # entry of each group is the deterministic z-buffer winner
        order = np.lexsort((flat, zt, target))
        winners_target, first = np.unique(target[order], return_index=True)
        out_values.reshape(-1)[winners_target] = zt[order][first]
        out_valid.reshape(-1)[winners_target] = True
        hit_source.reshape(-1)[winners_target] = flat[order][first]

    return WarpResult(DepthMap(out_values, out_valid), hit_source)


def warp_depth_backward(
    source: DepthMap,
    pose: Pose6,
    intrinsics: Intrinsics,
    result: WarpResult,
    upstream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate an H x W gradient through the warp.

    Returns (grad wrt source depth values, grad wrt the 6 pose components).
    ``result`` must come from ``warp_depth`` on the same inputs.
    """
    h, w = source.height, source.width
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (h, w):
        raise ValueError(f"upstream gradient shape {upstream.shape} != ({h}, {w})")
    if result.depth.values.shape != (h, w):
        raise ValueError("warp result does not match the source map")

    grad_source = np.zeros((h, w))
    grad_pose = np.zeros(6)

    mask = result.depth.valid
    if not mask.any():
        return grad_source, grad_pose

    winners = result.hit_source[mask]
    g = upstream[mask]
    rows, cols = winners // w, winners % w
    u = cols + 0.5
    v = rows + 0.5
    rays = np.stack(
        [
            (u - intrinsics.cx) / intrinsics.fx,
            (v - intrinsics.cy) / intrinsics.fy,
            np.ones_like(u),
        ]
    )
    depths = source.values[rows, cols]

    transform = pose_to_transform(pose)
    # z_t = R[2,:] @ (d * ray) + tz
    dz_dd = transform.rotation[2] @ rays
    grad_source[rows, cols] = g * dz_dd

    p_cam = rays * depths
    d_rot = rotation_derivatives(pose)
    for k in range(3):
        grad_pose[k] = np.dot(g, d_rot[k, 2] @ p_cam)
    grad_pose[5] = np.sum(g)
    return grad_source, grad_pose


def warp_tensor(
    depth: ad.Tensor,
    pose: ad.Tensor,
    intrinsics: Intrinsics,
    valid: np.ndarray | None = None,
) -> tuple[ad.Tensor, np.ndarray, WarpResult]:
    """Tape-recorded warp of a predicted depth tensor.

    ``pose`` is a 6-component tensor (possibly behind a gradient-reversal
    node). Returns the warped depth tensor, its validity mask, and the raw
    warp result. Gradients route to both the depth values and the pose.
    """
    if depth.ndim != 2:
        raise ValueError("depth tensor must be H x W")
    if pose.shape != (6,):
        raise ValueError("pose tensor must have 6 components")
    if valid is None:
        valid = np.ones(depth.shape, dtype=bool)
    source = DepthMap(depth.data, valid)
    pose6 = Pose6.from_array(pose.data)
    result = warp_depth(source, pose6, intrinsics)

    def backward_fn(g):
        grad_depth, grad_pose = warp_depth_backward(
            source, pose6, intrinsics, result, g
        )
        return grad_depth, grad_pose

    out = ad.custom_op(result.depth.values, (depth, pose), backward_fn)
    return out, result.depth.valid.copy(), result


def stable_region_mask(
    depth: DepthMap, rel_jump: float = 0.015, margin: int = 1
) -> np.ndarray:
    """Pixels safe to compare across warps at sub-pixel discretization.

    A pixel is unstable when any 8-neighbor is invalid or differs by more
    than ``rel_jump`` relative depth: splatting places a source point
    anywhere inside the target pixel, so the stored depth can legitimately
    differ from the pixel-center depth by about one pixel of depth
    gradient. The unstable set is dilated by ``margin`` pixels.
    """
    values, valid = depth.values, depth.valid
    bad = ~valid
    safe = np.where(valid, values, 1.0)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            shifted = np.roll(np.roll(safe, dr, axis=0), dc, axis=1)
            shifted_valid = np.roll(np.roll(valid, dr, axis=0), dc, axis=1)
            jump = np.abs(values - shifted) > rel_jump * np.minimum(values, shifted)
            bad |= ~shifted_valid | (valid & jump)
    # image border rows/columns have wrapped neighbors; mark them unstable
    bad[0, :] = bad[-1, :] = True
    bad[:, 0] = bad[:, -1] = True
    for _ in range(margin):
        grow = bad.copy()
        grow[1:, :] |= bad[:-1, :]
        grow[:-1, :] |= bad[1:, :]
        grow[:, 1:] |= bad[:, :-1]
        grow[:, :-1] |= bad[:, 1:]
        bad = grow
    return valid & ~bad
