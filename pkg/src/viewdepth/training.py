"""Dual-branch training loop with per-parameter-set gradient routing.

Each step supervises the predicted depth map directly and, unless running
the plain baseline, also supervises a warped view of it against the
equally warped ground truth. Gradients are routed per parameter set:

* trunk:      d(L_dep + L_warp) / d(theta)
* depth head: d(L_dep) / d(theta) only
* pose head:  gradient of the mining objective -L_warp + lambda . (p o p),
  realized by a gradient-reversal node between the generated pose and the
  warp, plus the quadratic penalty. The penalty reaches only the pose head.

The warping pose comes from one of four strategies: none (baseline), a
fixed preset, a fresh uniform sample inside the pose box, or the pose head
driven adversarially.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import synth
from .depthmap import DegenerateMaskError, DepthMap
from .geometry import Intrinsics, Pose6
from .losses import (
    LossConfig,
    adversarial_loss,
    dorn_loss,
    dorn_soft_decode,
    masked_loss,
    masked_loss_pair,
)
from .metrics import MetricsReport, mean_report, multiview_report
from .models import Networks, PoseRange
from .warp import warp_tensor

STRATEGY_KINDS = ("baseline", "fixed", "random", "adversarial")

# presets for the fixed-pose ablation: small yaw, small forward step, both
FIXED_POSE_PRESETS = {
    "a": Pose6(0.0, 0.05, 0.0, 0.0, 0.0, 0.0),
    "b": Pose6(0.0, 0.0, 0.0, 0.0, 0.0, -0.1),
    "c": Pose6(0.0, 0.05, 0.0, 0.0, 0.0, -0.1),
}


@dataclass(frozen=True)
class PoseStrategy:
    kind: str
    fixed_pose: Pose6 | None = None

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy must be one of {STRATEGY_KINDS}")
        if self.kind == "fixed" and self.fixed_pose is None:
            raise ValueError("fixed strategy needs a pose")

    @classmethod
    def fixed_preset(cls, name: str) -> "PoseStrategy":
        return cls("fixed", FIXED_POSE_PRESETS[name.lower()])


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    strategy: PoseStrategy = field(default_factory=lambda: PoseStrategy("baseline"))
    pose_range: PoseRange = field(default_factory=PoseRange)
    lr: float = 0.05
    steps: int = 2000
    seed: int = 0
    width: int = 64
    height: int = 64
    train_scene_start: int = 0
    train_scene_count: int = 200
    heldout_scene_start: int = 100_000
    heldout_scene_count: int = 20
    eval_every: int = 500
    trunk_widths: tuple[int, ...] = (8, 8, 8)
    head_hidden: int = 8
    intrinsics: Intrinsics | None = None
    # the pose generator plays a minimax game against much deeper players;
    # it needs a faster clock to mine hard poses within the step budget
    pose_lr_scale: float = 25.0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.strategy.kind == "fixed":
            bound = self.pose_range.as_vector()
            if np.any(np.abs(self.strategy.fixed_pose.as_array()) >= bound):
                raise ValueError("fixed pose must lie strictly inside the pose range")

    def camera(self) -> Intrinsics:
        return self.intrinsics or synth.default_intrinsics(self.width, self.height)


@dataclass
class StepReport:
    l_dep: float
    l_warp: float | None = None
    l_adv: float | None = None
    pose: np.ndarray | None = None
    warp_skipped: bool = False


@dataclass
class EvalPoint:
    step: int
    views: list[MetricsReport | None]

    def mean_delta1(self) -> float:
        present = [v.delta1 for v in self.views if v is not None]
        return float(np.mean(present)) if present else float("nan")


@dataclass
class TrainResult:
    nets: Networks
    trajectory: list[EvalPoint]
    skipped_warp_steps: int = 0

    def final_delta1(self) -> float:
        return self.trajectory[-1].mean_delta1()


def default_eval_poses(pose_range: PoseRange) -> list[Pose6]:
    """Identity plus four fixed views near the edge of the pose box."""
    r = 0.9 * pose_range.rot_max
    t = 0.9 * pose_range.trans_max
    return [
        Pose6.zero(),
        Pose6(0.0, r, 0.0, -t, 0.0, 0.0),
        Pose6(0.0, -r, 0.0, t, 0.0, 0.0),
        Pose6(r * 0.5, 0.0, 0.0, 0.0, t * 0.5, -t),
        Pose6(-r * 0.5, r * 0.5, 0.0, 0.0, -t * 0.5, t * 0.5),
    ]


def _snapshot(params) -> list[np.ndarray]:
    return [
        np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params
    ]


def _sample_pose(rng, pose_range: PoseRange) -> Pose6:
    bound = pose_range.as_vector()
    return Pose6.from_array(bound * rng.uniform(-1.0, 1.0, size=6))


def train_step(
    sample: synth.Sample,
    nets: Networks,
    config: TrainConfig,
    pose_rng=None,
    dep_scale: float = 1.0,
) -> StepReport:
    """One optimization step; returns the losses and pose that were used.

    ``dep_scale`` rescales the direct supervision term (diagnostics only;
    at 0 the depth head receives an exactly zero update).
    """
    intr = config.camera()
    kind = config.loss.kind
    gt = sample.depth
    tape = ad.active_tape()

    trunk_params, depth_params, pose_params = nets.parameter_sets()
    all_params = trunk_params + depth_params + pose_params

    z = nets.trunk.forward(ad.constant(sample.image))
    head_out = nets.depth_head.forward(z)
    if kind == "dorn":
        l_dep = dorn_loss(head_out, gt, np.ones(gt.values.shape, dtype=bool))
        depth_pred = dorn_soft_decode(ad.sigmoid(head_out), nets.dorn_sharpness)
    else:
        depth_pred = head_out
        l_dep = masked_loss(kind, depth_pred, gt, np.ones(gt.values.shape, dtype=bool))
    if dep_scale != 1.0:
        l_dep = ad.mul(l_dep, float(dep_scale))

    adversarial = config.strategy.kind == "adversarial"
    report = StepReport(l_dep=l_dep.item())

    if config.strategy.kind == "baseline":
        ad.backward(l_dep)
        ad.sgd_step(trunk_params, config.lr)
        ad.sgd_step(depth_params, config.lr)
        return report

    pose_tensor = None
    if adversarial:
        pose_tensor = nets.pose_head.forward(z)
        pose6 = Pose6.from_array(pose_tensor.data)
        warp_pose = ad.gradient_reversal(pose_tensor)
    elif config.strategy.kind == "fixed":
        pose6 = config.strategy.fixed_pose
        warp_pose = ad.constant(pose6.as_array())
    else:
        pose6 = _sample_pose(pose_rng, config.pose_range)
        warp_pose = ad.constant(pose6.as_array())
    report.pose = pose6.as_array()

    l_warp = None
    try:
        warped_pred, pred_valid, _ = warp_tensor(depth_pred, warp_pose, intr)
        # the ground-truth warp rides the tape too: the pose moves both maps,
        # so the adversary's gradient must feel both warps (the depth input
        # here is constant, only the pose derivative flows)
        warped_gt, gt_valid, _ = warp_tensor(
            ad.constant(gt.values), warp_pose, intr, valid=gt.valid
        )
        both = pred_valid & gt_valid
        warp_loss_kind = "l1" if kind == "dorn" else kind
        l_warp = masked_loss_pair(warp_loss_kind, warped_pred, warped_gt, both)
    except DegenerateMaskError:
        report.warp_skipped = True
        ad.backward(l_dep)
        ad.sgd_step(trunk_params, config.lr)
        ad.sgd_step(depth_params, config.lr)
        return report

    report.l_warp = l_warp.item()

    # pass 1: direct supervision feeds the trunk and, alone, the depth head
    ad.backward(l_dep, retain_tape=True)
    g_trunk_dep = _snapshot(trunk_params)
    g_depth = _snapshot(depth_params)
    ad.zero_grads(all_params)

    # pass 2: warp supervision for the trunk; the reversal node has already
    # negated what lands on the pose head
    ad.backward(l_warp, retain_tape=adversarial)
    g_trunk_warp = _snapshot(trunk_params)
    g_pose = _snapshot(pose_params) if adversarial else None
    ad.zero_grads(all_params)

    if adversarial:
        # pass 3: quadratic pose penalty reaches only the pose head
        l_adv = adversarial_loss(l_warp, pose_tensor, config.loss.lam)
        report.l_adv = l_adv.item()
        penalty = ad.sum(
            ad.mul(ad.constant(config.loss.lam), ad.mul(pose_tensor, pose_tensor))
        )
        ad.backward(penalty)
        g_pose = [a + b for a, b in zip(g_pose, _snapshot(pose_params))]
        ad.zero_grads(all_params)

    for p, a, b in zip(trunk_params, g_trunk_dep, g_trunk_warp):
        p.grad = a + b
    for p, g in zip(depth_params, g_depth):
        p.grad = g
    ad.sgd_step(trunk_params, config.lr)
    ad.sgd_step(depth_params, config.lr)
    if adversarial:
        for p, g in zip(pose_params, g_pose):
            p.grad = g
        ad.sgd_step(pose_params, config.lr * config.pose_lr_scale)
    tape.clear()
    return report


def evaluate_heldout(
    nets: Networks,
    heldout: list[synth.Sample],
    eval_poses: list[Pose6],
    intr: Intrinsics,
) -> list[MetricsReport | None]:
    """Per-view mean metrics of the inference path over held-out scenes."""
    per_view: list[list[MetricsReport]] = [[] for _ in range(len(eval_poses))]
    for sample in heldout:
        pred = DepthMap.from_values(nets.predict_depth(sample.image))
        views = multiview_report(pred, sample.depth, eval_poses, intr)
        for i, view in enumerate(views):
            if view is not None:
                per_view[i].append(view)
    return [mean_report(v) if v else None for v in per_view]


def _build_dataset(start: int, count: int, intr: Intrinsics, width: int,
                   height: int) -> list[synth.Sample]:
    return [synth.make_sample(s, intr, width, height) for s in range(start, start + count)]


def train_loop(
    config: TrainConfig,
    dataset: list[synth.Sample] | None = None,
    heldout: list[synth.Sample] | None = None,
    trajectory_path=None,
) -> TrainResult:
    """Run the configured number of steps, evaluating held-out scenes
    periodically (and always at the end when any step ran)."""
    intr = config.camera()
    if dataset is None:
        dataset = _build_dataset(
            config.train_scene_start, config.train_scene_count, intr,
            config.width, config.height,
        )
    if heldout is None:
        heldout = _build_dataset(
            config.heldout_scene_start, config.heldout_scene_count, intr,
            config.width, config.height,
        )
    bins = config.loss.dorn_bins if config.loss.kind == "dorn" else None
    nets = Networks.build(
        config.width,
        config.height,
        trunk_widths=config.trunk_widths,
        head_hidden=config.head_hidden,
        bins=bins,
        pose_range=config.pose_range,
        seed=config.seed,
        dorn_sharpness=config.loss.dorn_sharpness,
    )
    data_rng = np.random.default_rng(config.seed)
    pose_rng = np.random.default_rng(config.seed + 7919)
    eval_poses = default_eval_poses(config.pose_range)

    trajectory: list[EvalPoint] = []
    skipped = 0
    for step in range(1, config.steps + 1):
        sample = dataset[int(data_rng.integers(len(dataset)))]
        report = train_step(sample, nets, config, pose_rng=pose_rng)
        skipped += int(report.warp_skipped)
        if config.eval_every and step % config.eval_every == 0 and step != config.steps:
            trajectory.append(
                EvalPoint(step, evaluate_heldout(nets, heldout, eval_poses, intr))
            )
    if config.steps:
        trajectory.append(
            EvalPoint(config.steps, evaluate_heldout(nets, heldout, eval_poses, intr))
        )
    if trajectory_path is not None:
        write_trajectory(trajectory_path, trajectory)
    return TrainResult(nets, trajectory, skipped)


def write_trajectory(path, trajectory: list[EvalPoint]) -> None:
    """One line per eval point: step index then seven metrics per view."""
    from .metrics import METRIC_NAMES

    with open(path, "w", encoding="utf-8") as f:
        if trajectory:
            n_views = len(trajectory[0].views)
            cols = ["step"] + [
                f"view{i}_{name}" for i in range(n_views) for name in METRIC_NAMES
            ]
            f.write("# " + "\t".join(cols) + "\n")
        for point in trajectory:
            row = [str(point.step)]
            for view in point.views:
                if view is None:
                    row.extend(["nan"] * len(METRIC_NAMES))
                else:
                    row.extend(f"{v:.12g}" for v in view.as_dict().values())
            f.write("\t".join(row) + "\n")


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkRun:
    strategy: str
    trial: int
    delta1: float
    views: list[MetricsReport | None]


@dataclass
class BenchmarkResult:
    runs: list[BenchmarkRun]
    elapsed: float

    def mean_delta1(self, strategy: str) -> float:
        return float(
            np.mean([r.delta1 for r in self.runs if r.strategy == strategy])
        )

    def trial_delta1(self, strategy: str, trial: int) -> float:
        for r in self.runs:
            if r.strategy == strategy and r.trial == trial:
                return r.delta1
        raise KeyError((strategy, trial))

    def strategies(self) -> list[str]:
        seen: list[str] = []
        for r in self.runs:
            if r.strategy not in seen:
                seen.append(r.strategy)
        return seen


def standard_benchmark_config() -> TrainConfig:
    """The desk-scale benchmark: 64x64 views, 200 train scenes, 2000 steps."""
    return TrainConfig(steps=2000, train_scene_count=200, eval_every=0, lr=0.05)


def strategy_label(strategy: PoseStrategy) -> str:
    if strategy.kind != "fixed":
        return strategy.kind
    for name, pose in FIXED_POSE_PRESETS.items():
        if pose == strategy.fixed_pose:
            return f"fixed-{name}"
    return "fixed"


def run_benchmark(
    config: TrainConfig,
    strategies: list[PoseStrategy],
    trials: int = 1,
) -> BenchmarkResult:
    """Train every strategy on identical data and seeds, once per trial."""
    intr = config.camera()
    dataset = _build_dataset(
        config.train_scene_start, config.train_scene_count, intr,
        config.width, config.height,
    )
    heldout = _build_dataset(
        config.heldout_scene_start, config.heldout_scene_count, intr,
        config.width, config.height,
    )
    start = time.perf_counter()
    runs: list[BenchmarkRun] = []
    for trial in range(trials):
        for strategy in strategies:
            cfg = replace(config, strategy=strategy, seed=config.seed + trial)
            result = train_loop(cfg, dataset=dataset, heldout=heldout)
            final = result.trajectory[-1]
            runs.append(
                BenchmarkRun(
                    strategy_label(strategy), trial, final.mean_delta1(), final.views
                )
            )
    return BenchmarkResult(runs, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# plain-text configuration files


class MissingConfigKeys(ValueError):
    def __init__(self, keys: list[str]):
        self.keys = keys
        super().__init__("missing required config keys: " + ", ".join(keys))


REQUIRED_CONFIG_KEYS = ("loss", "strategy", "lr", "steps", "seed")


def parse_keyvalues(text: str) -> dict[str, str]:
    """``key = value`` lines; blank lines and # comments are ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not 'key = value': {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _floats(text: str, n: int, what: str) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated numbers")
    return np.array([float(p) for p in parts])


def config_from_mapping(raw: dict[str, str]) -> TrainConfig:
    missing = [k for k in REQUIRED_CONFIG_KEYS if k not in raw]
    if missing:
        raise MissingConfigKeys(missing)

    loss = LossConfig(
        kind=raw["loss"],
        lam=_floats(raw["lambda"], 6, "lambda") if "lambda" in raw else np.ones(6),
        dorn_bins=int(raw.get("dorn_bins", 40)),
        dorn_sharpness=float(raw.get("dorn_sharpness", 100.0)),
    )
    pose_range = PoseRange(
        rot_max=float(raw.get("rot_max", 0.1)),
        trans_max=float(raw.get("trans_max", 0.2)),
    )
    kind = raw["strategy"]
    if kind == "fixed":
        spec = raw.get("fixed_pose", "a")
        if spec.lower() in FIXED_POSE_PRESETS:
            strategy = PoseStrategy.fixed_preset(spec)
        else:
            strategy = PoseStrategy("fixed", Pose6.from_array(_floats(spec, 6, "fixed_pose")))
    else:
        strategy = PoseStrategy(kind)

    intr = None
    if "intrinsics" in raw:
        fx, fy, cx, cy = _floats(raw["intrinsics"], 4, "intrinsics")
        intr = Intrinsics(fx, fy, cx, cy)
    widths = tuple(
        int(v) for v in raw.get("trunk_widths", "8,8,8").replace(",", " ").split()
    )

    return TrainConfig(
        loss=loss,
        strategy=strategy,
        pose_range=pose_range,
        lr=float(raw["lr"]),
        steps=int(raw["steps"]),
        seed=int(raw["seed"]),
        width=int(raw.get("width", 64)),
        height=int(raw.get("height", 64)),
        train_scene_start=int(raw.get("train_scene_start", 0)),
        train_scene_count=int(raw.get("train_scene_count", 200)),
        heldout_scene_start=int(raw.get("heldout_scene_start", 100_000)),
        heldout_scene_count=int(raw.get("heldout_scene_count", 20)),
        eval_every=int(raw.get("eval_every", 500)),
        trunk_widths=widths,
        head_hidden=int(raw.get("head_hidden", 8)),
        intrinsics=intr,
        pose_lr_scale=float(raw.get("pose_lr_scale", 25.0)),
    )
