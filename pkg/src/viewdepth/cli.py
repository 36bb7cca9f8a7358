"""Command-line surface: warp, train, eval, gradcheck, synth, bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, synth, training
from .depthmap import DepthMap
from .geometry import Intrinsics, Pose6, RigidTransform
from .metrics import METRIC_NAMES, evaluate, multiview_report
from .models import save_checkpoint
from .pfm import read_pfm, write_pfm
from .training import (
    MissingConfigKeys,
    PoseStrategy,
    config_from_mapping,
    parse_keyvalues,
    run_benchmark,
    standard_benchmark_config,
    strategy_label,
)


def _parse_pose(text: str) -> Pose6:
    parts = text.split(",")
    if len(parts) != 6:
        raise ValueError("pose must be rx,ry,rz,tx,ty,tz")
    return Pose6(*(float(p) for p in parts))


def _parse_intrinsics(text: str) -> Intrinsics:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError("intrinsics must be fx,fy,cx,cy")
    return Intrinsics(*(float(p) for p in parts))


def _cmd_warp(args) -> int:
    pose = _parse_pose(args.pose)
    intr = _parse_intrinsics(args.intrinsics)
    depth = read_pfm(args.depth)
    from .warp import warp_depth

    result = warp_depth(depth, pose, intr)
    write_pfm(args.out, result.depth)
    fraction = float(result.depth.valid.mean())
    if fraction == 0.0:
        print("warning: warped map has no valid pixels", file=sys.stderr)
    print(f"valid_fraction\t{fraction:.6f}")
    return 0


def _cmd_eval(args) -> int:
    pred = read_pfm(args.pred)
    gt = read_pfm(args.gt)
    if args.poses is None:
        print(evaluate(pred, gt).to_lines())
        return 0
    if args.intrinsics is None:
        raise ValueError("--poses requires --intrinsics for warping")
    intr = _parse_intrinsics(args.intrinsics)
    poses = []
    for line in Path(args.poses).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        poses.append(_parse_pose(line.replace(" ", ",").replace(",,", ",")))
    views = multiview_report(pred, gt, poses, intr)
    for i, view in enumerate(views):
        print(f"view {i}")
        print(view.to_lines() if view is not None else "absent")
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    intr = (
        _parse_intrinsics(args.intrinsics)
        if args.intrinsics
        else synth.default_intrinsics(args.width, args.height)
    )
    scene = synth.generate_scene(args.seed)
    depth, image = synth.render_view(
        scene, RigidTransform.identity(), intr, args.width, args.height
    )
    (out / "scene.txt").write_text(synth.scene_to_text(scene), encoding="utf-8")
    write_pfm(out / "depth.pfm", depth)
    np.save(out / "image.npy", image)
    print(f"scene {args.seed}: {len(scene.primitives)} primitives -> {out}")
    return 0


def _cmd_train(args) -> int:
    raw = parse_keyvalues(Path(args.config).read_text(encoding="utf-8"))
    config = config_from_mapping(raw)
    out_dir = Path(raw.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    result = training.train_loop(
        config, trajectory_path=out_dir / "trajectory.tsv"
    )
    save_checkpoint(out_dir / "checkpoint.bin", result.nets.state_dict())
    final = result.trajectory[-1] if result.trajectory else None
    if final is not None:
        print(f"final_multiview_delta1\t{final.mean_delta1():.6f}")
        for i, view in enumerate(final.views):
            print(f"view {i}")
            print(view.to_lines() if view is not None else "absent")
    if result.skipped_warp_steps:
        print(f"skipped_warp_steps\t{result.skipped_warp_steps}")
    print(f"wrote {out_dir / 'trajectory.tsv'} and {out_dir / 'checkpoint.bin'}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, warp_seeds=args.warp_seeds)
    failures = 0
    for result in results:
        print(result)
        failures += int(not result.passed)
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return 1 if failures else 0


_BENCH_ORDER = ("baseline", "fixed-a", "fixed-b", "fixed-c", "random", "adversarial")


def _strategies_from_names(names: list[str]) -> list[PoseStrategy]:
    out = []
    for name in names:
        if name.startswith("fixed-"):
            out.append(PoseStrategy.fixed_preset(name.split("-", 1)[1]))
        else:
            out.append(PoseStrategy(name))
    return out


def _cmd_bench(args) -> int:
    if args.strategies == "all":
        names = list(_BENCH_ORDER)
    else:
        names = [n.strip() for n in args.strategies.split(",") if n.strip()]
    strategies = _strategies_from_names(names)
    config = standard_benchmark_config()
    if args.steps is not None:
        config.steps = args.steps
    if args.train_scenes is not None:
        config.train_scene_count = args.train_scenes
    if args.heldout_scenes is not None:
        config.heldout_scene_count = args.heldout_scenes
    config.seed = args.seed
    result = run_benchmark(config, strategies, trials=args.trials)

    header = ["strategy"] + list(METRIC_NAMES)
    print("\t".join(header))
    for label in [strategy_label(s) for s in strategies]:
        rows = [r for r in result.runs if r.strategy == label]
        views = [v for r in rows for v in r.views if v is not None]
        means = {
            name: float(np.mean([getattr(v, name) for v in views]))
            for name in METRIC_NAMES
        }
        print(label + "\t" + "\t".join(f"{means[name]:.4f}" for name in METRIC_NAMES))
    print(f"# {args.trials} trial(s), {result.elapsed:.1f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewdepth",
        description="Depth-map warping, view-consistency training, and evaluation tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", help="warp a PFM depth map by a 6-DoF pose")
    p.add_argument("--depth", required=True)
    p.add_argument("--pose", required=True, help="rx,ry,rz,tx,ty,tz")
    p.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("eval", help="compare two PFM depth maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--poses", help="text file, one pose per line, for multi-view")
    p.add_argument("--intrinsics", help="fx,fy,cx,cy (required with --poses)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene and render it")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--intrinsics")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warp-seeds", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("bench", help="compare pose strategies on identical seeds")
    p.add_argument("--strategies", default="all")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--steps", type=int)
    p.add_argument("--train-scenes", type=int)
    p.add_argument("--heldout-scenes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingConfigKeys as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
