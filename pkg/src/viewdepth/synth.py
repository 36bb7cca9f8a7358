"""Procedural box-room scenes with exact analytic depth rendering.

Scenes are built from axis-aligned infinite planes and boxes so every
camera ray has a closed-form nearest intersection; the renderer is the
independent oracle against which the warp operator is checked.

Camera motion versus point transform, worked through once to fix signs:
a warp pose with tz = -0.5 maps scene points 0.5 m closer to the camera
(a wall at z = 2.0 lands at z = 1.5). The very same view is obtained by a
camera that moved 0.5 m forward. ``render_depth`` therefore takes the
point transform itself as the ``camera`` argument (world -> camera), and
internally traces rays through its inverse: ray origins sit at
``-R^T T`` and directions are ``R^T d``. Rendering with the transform
returned by ``pose_to_transform(p)`` reproduces what ``warp_depth`` does
with the pose ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depthmap import DepthMap
from .geometry import Intrinsics, RigidTransform

_EPS = 1e-9

# fixed directional light for shading, unit length, world frame
_LIGHT = np.array([0.35, -0.55, -0.76])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


@dataclass(frozen=True)
class Plane:
    """Axis-aligned infinite plane: ``point[axis] == offset``."""

    axis: int
    offset: float
    albedo: float


@dataclass(frozen=True)
class Box:
    """Axis-aligned box spanning ``lo`` to ``hi`` (meters)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    albedo: float


@dataclass
class Scene:
    primitives: list = field(default_factory=list)
    seed: int = 0


@dataclass
class Sample:
    """One training example: shaded input image plus ground-truth depth."""

    image: np.ndarray  # (3, H, W)
    depth: DepthMap
    seed: int


def default_intrinsics(width: int, height: int) -> Intrinsics:
    """Benchmark camera: ~53 degree horizontal field of view."""
    return Intrinsics(float(width), float(width), width / 2.0, height / 2.0)


def generate_scene(seed: int) -> Scene:
    """Deterministic room: back wall, floor, ceiling, and 3-8 boxes.

    From the default (identity) camera every ray hits the back wall at
    worst, so the rendered mask is always full, and all hit depths stay
    inside [0.5, 10] m.
    """
    rng = np.random.default_rng(seed)
    wall_z = rng.uniform(4.0, 8.0)
    prims: list = [
        Plane(2, wall_z, rng.uniform(0.35, 0.95)),
        Plane(1, rng.uniform(1.0, 1.6), rng.uniform(0.3, 0.9)),  # floor, +y is down
        Plane(1, -rng.uniform(1.0, 1.6), rng.uniform(0.3, 0.9)),  # ceiling
    ]
    for _ in range(int(rng.integers(3, 9))):
        zc = rng.uniform(1.7, wall_z - 0.8)
        half = rng.uniform(0.15, 0.6, size=3)
        center = np.array(
            [rng.uniform(-0.45, 0.45) * zc, rng.uniform(-0.35, 0.35) * zc, zc]
        )
        lo = center - half
        hi = center + half
        prims.append(Box(tuple(lo), tuple(hi), rng.uniform(0.25, 1.0)))
    return Scene(prims, seed)


def _trace(scene: Scene, camera: RigidTransform, intrinsics: Intrinsics,
           width: int, height: int):
    """Nearest hit per pixel: returns flat (depth, prim index, normal (3,N))."""
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dirs_cam = np.stack(
        [
            (ii.ravel() + 0.5 - intrinsics.cx) / intrinsics.fx,
            (jj.ravel() + 0.5 - intrinsics.cy) / intrinsics.fy,
            np.ones(width * height),
        ]
    )
    # camera argument is the world->camera point map; trace with its inverse
    rot_cw = camera.rotation.T
    origin = -rot_cw @ camera.translation
    d = rot_cw @ dirs_cam
    n = d.shape[1]

    best_t = np.full(n, np.inf)
    best_prim = np.full(n, -1, dtype=np.int64)
    best_normal = np.zeros((3, n))

    for index, prim in enumerate(scene.primitives):
        if isinstance(prim, Plane):
            da = d[prim.axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (prim.offset - origin[prim.axis]) / da
            hit = np.isfinite(t) & (t > _EPS)
            normal = np.zeros((3, n))
            normal[prim.axis] = -np.sign(da)
        else:
            lo = np.asarray(prim.lo)
            hi = np.asarray(prim.hi)
            t_near = np.full(n, -np.inf)
            t_far = np.full(n, np.inf)
            near_axis = np.zeros(n, dtype=np.int64)
            for axis in range(3):
                da = d[axis]
                oa = origin[axis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t1 = (lo[axis] - oa) / da
                    t2 = (hi[axis] - oa) / da
                parallel = np.abs(da) < _EPS
                inside = (oa >= lo[axis]) & (oa <= hi[axis])
                slab_lo = np.where(parallel, np.where(inside, -np.inf, np.inf),
                                   np.minimum(t1, t2))
                slab_hi = np.where(parallel, np.where(inside, np.inf, -np.inf),
                                   np.maximum(t1, t2))
                enters = slab_lo > t_near
                near_axis = np.where(enters, axis, near_axis)
                t_near = np.maximum(t_near, slab_lo)
                t_far = np.minimum(t_far, slab_hi)
            hit = (t_near <= t_far) & (t_near > _EPS)
            t = t_near
            rows = near_axis[hit]
            normal = np.zeros((3, n))
            cols = np.nonzero(hit)[0]
            normal[rows, cols] = -np.sign(d[rows, cols])

        closer = hit & (t < best_t)
        best_t = np.where(closer, t, best_t)
        best_prim = np.where(closer, index, best_prim)
        best_normal = np.where(closer, normal, best_normal)

    return best_t, best_prim, best_normal


def render_depth(scene: Scene, camera: RigidTransform, intrinsics: Intrinsics,
                 width: int, height: int) -> DepthMap:
    """Exact per-pixel depth seen by a camera at the given point transform.

    Rays go through pixel centers; the distance parameter along the
    unnormalized ray (z component 1 in the camera frame) equals the
    camera-frame depth of the hit, so no conversion is needed.
    """
    t, _, _ = _trace(scene, camera, intrinsics, width, height)
    valid = np.isfinite(t)
    values = np.where(valid, t, 0.0)
    return DepthMap(values.reshape(height, width), valid.reshape(height, width))


def render_view(scene: Scene, camera: RigidTransform, intrinsics: Intrinsics,
                width: int, height: int) -> tuple[DepthMap, np.ndarray]:
    """Depth map plus the shaded 3-channel image networks learn from.

    Channels: lambertian shading times albedo, raw lambertian term, and an
    albedo-contaminated inverse-depth cue. Depth is recoverable from the
    combination but not from any single channel, which leaves the
    estimation task nondegenerate.
    """
    t, prim_index, normal = _trace(scene, camera, intrinsics, width, height)
    valid = np.isfinite(t)
    depth = np.where(valid, t, 0.0)

    albedos = np.array([p.albedo for p in scene.primitives])
    albedo = np.where(valid, albedos[np.where(valid, prim_index, 0)], 0.0)
    lambert = np.abs(_LIGHT @ normal)
    shade = albedo * (0.35 + 0.65 * lambert)
    cue = (0.55 + 0.45 * albedo) / (1.0 + 0.35 * depth)

    image = np.stack([shade, lambert, np.where(valid, cue, 0.0)])
    image = image.reshape(3, height, width)
    return (
        DepthMap(depth.reshape(height, width), valid.reshape(height, width)),
        image,
    )


def make_sample(seed: int, intrinsics: Intrinsics, width: int, height: int) -> Sample:
    """Generate a scene and render it from the default (identity) camera."""
    scene = generate_scene(seed)
    depth, image = render_view(
        scene, RigidTransform.identity(), intrinsics, width, height
    )
    return Sample(image, depth, seed)


def scene_to_text(scene: Scene) -> str:
    """One primitive per line; parseable back with scene_from_text."""
    lines = [f"# scene seed={scene.seed}"]
    for prim in scene.primitives:
        if isinstance(prim, Plane):
            lines.append(f"plane {prim.axis} {prim.offset!r} {prim.albedo!r}")
        else:
            lo = " ".join(repr(v) for v in prim.lo)
            hi = " ".join(repr(v) for v in prim.hi)
            lines.append(f"box {lo} {hi} {prim.albedo!r}")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    scene = Scene()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "seed=" in line:
                scene.seed = int(line.split("seed=")[1])
            continue
        parts = line.split()
        if parts[0] == "plane" and len(parts) == 4:
            scene.primitives.append(
                Plane(int(parts[1]), float(parts[2]), float(parts[3]))
            )
        elif parts[0] == "box" and len(parts) == 8:
            values = [float(v) for v in parts[1:]]
            scene.primitives.append(
                Box(tuple(values[0:3]), tuple(values[3:6]), values[6])
            )
        else:
            raise ValueError(f"unrecognized scene line: {line!r}")
    return scene
