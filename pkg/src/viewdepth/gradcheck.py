"""Finite-difference verification of every analytic gradient in the package.

The harness is shared by the test suite and the ``gradcheck`` CLI command.
Each check compares reverse-mode gradients of a scalar probe loss
``sum(weights * f(x))`` against central finite differences, element by
element, on small random inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .depthmap import DepthMap
from .geometry import Intrinsics, Pose6
from .models import DepthHead
from .losses import dorn_soft_decode
from .synth import default_intrinsics, generate_scene, render_depth
from .geometry import RigidTransform
from .warp import warp_depth, warp_depth_backward


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:32s} err={self.max_error:.3e} tol={self.tolerance:.0e}"


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        f_plus = f(x)
        flat[i] = keep - step
        f_minus = f(x)
        flat[i] = keep
        grad_flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise deviation, relative above magnitude 1e-3."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def _probe(op: Callable[..., ad.Tensor], arg_shapes, rng, step=1e-6, wrap=None):
    """Gradcheck ``sum(w * op(args))`` wrt every argument."""
    args = [rng.normal(0.0, 1.0, shape) for shape in arg_shapes]
    if wrap is not None:
        args = [wrap(a) for a in args]
    out_shape = op(*[ad.constant(a) for a in args]).shape
    weights = rng.normal(0.0, 1.0, out_shape)

    worst = 0.0
    for index in range(len(args)):

        def loss_value(x: np.ndarray) -> float:
            probe_args = [ad.constant(a) for a in args]
            probe_args[index] = ad.constant(x)
            return float(np.sum(weights * op(*probe_args).data))

        tensors = [ad.Tensor(a, requires_grad=(i == index)) for i, a in enumerate(args)]
        loss = ad.sum(ad.mul(op(*tensors), ad.constant(weights)))
        ad.backward(loss)
        analytic = tensors[index].grad
        numeric = numeric_grad(loss_value, args[index].copy(), step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_autodiff_primitives(seed: int = 0, tolerance: float = 1e-6) -> list[CheckResult]:
    """Finite-difference checks for every differentiable primitive.

    Inputs for relu and abs are kept away from their kinks. The
    gradient-reversal node is checked against its contract directly since
    its backward is intentionally not the derivative of its forward.
    """
    rng = np.random.default_rng(seed)
    away = lambda a: np.where(np.abs(a) < 0.2, a + 0.5 * np.sign(a) + 0.25, a)

    checks: list[tuple[str, Callable, list, Callable | None]] = [
        ("add", ad.add, [(3, 4), (3, 4)], None),
        ("add scalar", lambda x: ad.add(x, 1.7), [(3, 4)], None),
        ("sub", ad.sub, [(3, 4), (3, 4)], None),
        ("mul", ad.mul, [(3, 4), (3, 4)], None),
        ("mul scalar", lambda x: ad.mul(x, -2.5), [(3, 4)], None),
        ("neg", ad.neg, [(5,)], None),
        ("matmul 2d", ad.matmul, [(3, 4), (4, 2)], None),
        ("matmul vec", ad.matmul, [(3, 4), (4,)], None),
        ("conv2d 3x3", ad.conv2d, [(2, 5, 5), (3, 2, 3, 3), (3,)], None),
        ("conv2d 1x1", ad.conv2d, [(3, 4, 4), (2, 3, 1, 1), (2,)], None),
        ("relu", ad.relu, [(4, 4)], away),
        ("sigmoid", ad.sigmoid, [(4, 4)], None),
        ("softsign", ad.softsign, [(4, 4)], away),
        ("exp", ad.exp, [(3, 3)], None),
        ("abs", ad.abs, [(4, 4)], away),
        ("mean", ad.mean, [(4, 5)], None),
        ("sum", ad.sum, [(4, 5)], None),
        ("sum axis", lambda x: ad.sum(x, axis=0), [(3, 4, 2)], None),
        ("reshape", lambda x: ad.reshape(x, (2, 6)), [(3, 4)], None),
    ]
    results = [
        CheckResult(name, _probe(op, shapes, rng, wrap=wrap), tolerance)
        for name, op, shapes, wrap in checks
    ]

    # gradient reversal: forward identity, backward exactly -upstream
    x = ad.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w = rng.normal(size=(3, 3))
    out = ad.gradient_reversal(x)
    forward_err = float(np.max(np.abs(out.data - x.data)))
    ad.backward(ad.sum(ad.mul(out, ad.constant(w))))
    reversal_err = float(np.max(np.abs(x.grad + w)))
    results.append(
        CheckResult("gradient_reversal", max(forward_err, reversal_err), 1e-15)
    )
    return results


def check_depth_head(seed: int = 0, tolerance: float = 1e-6) -> CheckResult:
    """The depth head in isolation, including the positive squash."""
    rng = np.random.default_rng(seed)
    head = DepthHead(3, 4, rng)
    # generic parameter values: the zero-bias initialization parks whole
    # channels exactly on the relu kink, where finite differences and the
    # subgradient legitimately disagree
    for param in head.params:
        param.data = rng.normal(0.0, 0.4, param.shape)
    z = rng.normal(0.0, 1.0, (3, 5, 5))
    weights = rng.normal(0.0, 1.0, (5, 5))

    worst = 0.0
    for param in head.params:

        def loss_value(x: np.ndarray) -> float:
            keep = param.data
            param.data = x
            value = float(np.sum(weights * head.forward(ad.constant(z)).data))
            param.data = keep
            return value

        loss = ad.sum(ad.mul(head.forward(ad.Tensor(z)), ad.constant(weights)))
        ad.backward(loss)
        analytic = param.grad.copy()
        ad.zero_grads(head.params)
        # composite chain: 1e-5 balances truncation against float64 rounding
        numeric = numeric_grad(loss_value, param.data.copy(), 1e-5)
        worst = max(worst, relative_error(analytic, numeric))
    return CheckResult("depth head", worst, tolerance)


def check_soft_decode(seed: int = 0, tolerance: float = 1e-5) -> CheckResult:
    """Ordinal soft decode, checked at moderate sharpness so the finite
    differences stay well conditioned."""
    rng = np.random.default_rng(seed)
    probs = rng.uniform(0.05, 0.95, (6, 3, 3))
    weights = rng.normal(0.0, 1.0, (3, 3))
    sharpness = 8.0

    def loss_value(x: np.ndarray) -> float:
        return float(np.sum(weights * dorn_soft_decode(ad.constant(x), sharpness).data))

    t = ad.Tensor(probs, requires_grad=True)
    ad.backward(ad.sum(ad.mul(dorn_soft_decode(t, sharpness), ad.constant(weights))))
    numeric = numeric_grad(loss_value, probs.copy(), 1e-6)
    return CheckResult("soft decode", relative_error(t.grad, numeric), tolerance)


def check_warp_gradients(
    n_seeds: int = 20,
    size: int = 32,
    tolerance: float = 1e-3,
    depth_probes: int = 4,
) -> list[CheckResult]:
    """Warp pose/depth gradients against finite differences of a masked
    probe loss, restricted to pixels whose z-buffer winner is stable.

    The probe loss is sum(w * warped_depth) over a stability mask: pixels
    valid in the base and both perturbed warps, with an identical winning
    source index in all three. Pixels whose winner changes under the
    perturbation carry a legitimate subgradient discontinuity and are
    excluded, mirroring the hard-min forward rule.
    """
    results = []
    step = 1e-4
    for seed in range(n_seeds):
        rng = np.random.default_rng(1000 + seed)
        intr = default_intrinsics(size, size)
        scene = generate_scene(seed)
        source = render_depth(scene, RigidTransform.identity(), intr, size, size)
        pose_vec = np.concatenate(
            [rng.uniform(-0.1, 0.1, 3), rng.uniform(-0.2, 0.2, 3)]
        )
        weights = rng.normal(0.0, 1.0, (size, size))

        base = warp_depth(source, Pose6.from_array(pose_vec), intr)

        def masked_loss_and_result(src: DepthMap, p: np.ndarray):
            res = warp_depth(src, Pose6.from_array(p), intr)
            return res

        worst = 0.0
        # pose components
        for k in range(6):
            plus = pose_vec.copy()
            plus[k] += step
            minus = pose_vec.copy()
            minus[k] -= step
            res_p = masked_loss_and_result(source, plus)
            res_m = masked_loss_and_result(source, minus)
            stable = (
                base.depth.valid
                & res_p.depth.valid
                & res_m.depth.valid
                & (base.hit_source == res_p.hit_source)
                & (base.hit_source == res_m.hit_source)
            )
            if not stable.any():
                continue
            w = np.where(stable, weights, 0.0)
            fd = (np.sum(w * res_p.depth.values) - np.sum(w * res_m.depth.values)) / (
                2 * step
            )
            _, grad_pose = warp_depth_backward(
                source, Pose6.from_array(pose_vec), intr, base, w
            )
            worst = max(worst, relative_error(np.array([grad_pose[k]]), np.array([fd])))

        # depth at a few random valid source pixels
        rows, cols = np.nonzero(source.valid)
        picks = rng.choice(rows.size, size=min(depth_probes, rows.size), replace=False)
        grad_depth, _ = warp_depth_backward(
            source, Pose6.from_array(pose_vec), intr, base, weights
        )
        for pick in picks:
            r, c = rows[pick], cols[pick]
            values_p = source.values.copy()
            values_p[r, c] += step
            values_m = source.values.copy()
            values_m[r, c] -= step
            res_p = masked_loss_and_result(DepthMap(values_p, source.valid), pose_vec)
            res_m = masked_loss_and_result(DepthMap(values_m, source.valid), pose_vec)
            stable = (
                base.depth.valid
                & res_p.depth.valid
                & res_m.depth.valid
                & (base.hit_source == res_p.hit_source)
                & (base.hit_source == res_m.hit_source)
            )
            w = np.where(stable, weights, 0.0)
            fd = (np.sum(w * res_p.depth.values) - np.sum(w * res_m.depth.values)) / (
                2 * step
            )
            grad_stable, _ = warp_depth_backward(
                source, Pose6.from_array(pose_vec), intr, base, w
            )
            worst = max(
                worst, relative_error(np.array([grad_stable[r, c]]), np.array([fd]))
            )
        results.append(CheckResult(f"warp grads seed {seed}", worst, tolerance))
    return results


def run_all(seed: int = 0, warp_seeds: int = 20) -> list[CheckResult]:
    results = check_autodiff_primitives(seed)
    results.append(check_depth_head(seed))
    results.append(check_soft_decode(seed))
    results.extend(check_warp_gradients(warp_seeds))
    return results
