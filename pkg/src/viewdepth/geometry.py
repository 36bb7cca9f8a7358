"""Pinhole camera model and rigid-transform algebra.

Conventions, fixed once for the whole package:

* Camera frame: x right, y down, z forward. Depth is the camera-frame z
  coordinate and is strictly positive for visible points.
* Rotations compose as ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``. Poses handled here
  are small (a few tenths of a radian), far from gimbal lock.
* A :class:`RigidTransform` ``(R, T)`` maps points expressed in the source
  camera frame into the target camera frame: ``p_target = R @ p_source + T``.
  It is a point map, not a description of camera motion; see ``synth`` for
  the camera-motion side of the same transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_ROT_TOL = 1e-9


def _require_finite(name: str, *values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{name} components must be finite")


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters in pixels: focal lengths and principal point."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        _require_finite("intrinsics", self.fx, self.fy, self.cx, self.cy)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Pose6:
    """6-DoF pose vector: rotation (radians) then translation (meters)."""

    rx: float
    ry: float
    rz: float
    tx: float
    ty: float
    tz: float

    def __post_init__(self) -> None:
        _require_finite("pose", self.rx, self.ry, self.rz, self.tx, self.ty, self.tz)

    def as_array(self) -> np.ndarray:
        return np.array([self.rx, self.ry, self.rz, self.tx, self.ty, self.tz])

    @classmethod
    def from_array(cls, a) -> "Pose6":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (6,):
            raise ValueError("pose array must have 6 components")
        return cls(*(float(v) for v in a))

    @classmethod
    def zero(cls) -> "Pose6":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.as_array())


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation vector acting on points."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ROT_TOL:
            raise ValueError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ROT_TOL:
            raise ValueError("rotation matrix determinant must be 1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (3,) or (3, N) through ``R @ p + T``."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return self.rotation @ points + self.translation[:, None]


def _rx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def pose_to_transform(pose: Pose6) -> RigidTransform:
    """Expand a 6-DoF pose vector into its rigid point transform."""
    r = _rz(pose.rz) @ _ry(pose.ry) @ _rx(pose.rx)
    return RigidTransform(r, np.array([pose.tx, pose.ty, pose.tz]))


def rotation_derivatives(pose: Pose6) -> np.ndarray:
    """Stack of dR/drx, dR/dry, dR/drz for ``R = Rz @ Ry @ Rx``, shape (3, 3, 3)."""
    rx, ry, rz = _rx(pose.rx), _ry(pose.ry), _rz(pose.rz)
    return np.stack(
        [rz @ ry @ _drx(pose.rx), rz @ _dry(pose.ry) @ rx, _drz(pose.rz) @ ry @ rx]
    )


def invert_transform(t: RigidTransform) -> RigidTransform:
    """Inverse point map: ``(R^T, -R^T T)``."""
    rt = t.rotation.T
    return RigidTransform(rt.copy(), -rt @ t.translation)


def transform_to_pose(t: RigidTransform) -> Pose6:
    """Recover the 6-DoF vector of a transform produced by pose_to_transform.

    Valid while |ry| < pi/2, which covers every pose this package generates.
    """
    r = t.rotation
    ry = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    rx = math.atan2(r[2, 1], r[2, 2])
    rz = math.atan2(r[1, 0], r[0, 0])
    tx, ty, tz = (float(v) for v in t.translation)
    return Pose6(rx, ry, rz, tx, ty, tz)


class Projection(NamedTuple):
    """Result of projecting a camera-frame point onto the image plane.

    ``in_front`` is False for points with z <= 0, whose pixel coordinates
    are meaningless and must be dropped by the caller.
    """

    u: float
    v: float
    z: float
    in_front: bool


def backproject(pixel, depth: float, intrinsics: Intrinsics) -> np.ndarray:
    """Lift a continuous pixel coordinate at the given depth into the camera frame."""
    if not (depth > 0.0 and math.isfinite(depth)):
        raise ValueError("depth must be finite and > 0")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array(
        [
            depth * (u - intrinsics.cx) / intrinsics.fx,
            depth * (v - intrinsics.cy) / intrinsics.fy,
            depth,
        ]
    )


def project(point, intrinsics: Intrinsics) -> Projection:
    """Project a camera-frame point to continuous pixel coordinates."""
    x, y, z = (float(c) for c in point)
    if z <= 0.0:
        return Projection(math.nan, math.nan, z, False)
    return Projection(
        intrinsics.fx * x / z + intrinsics.cx,
        intrinsics.fy * y / z + intrinsics.cy,
        z,
        True,
    )
