"""Desk-scale networks: shared conv trunk, depth head, and pose head.

The trunk is a stack of stride-1 3x3 convolutions with ReLU. The depth
head follows a 3x3 -> 1x1 structure with a per-pixel linear projection and
squashes its output into the package depth range through an exp-free
softsign, so predictions are strictly positive for any parameters. The
pose head is a small conv stack plus a fully-connected layer whose raw
output is squashed per component into (-range_i, +range_i) by a scaled,
shifted sigmoid.

The three parameter sets are disjoint by construction; the training loop's
gradient routing depends on that.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .depthmap import DEPTH_MAX, DEPTH_MIN


@dataclass(frozen=True)
class PoseRange:
    """Half-widths of the pose box the squash maps into."""

    rot_max: float = 0.1
    trans_max: float = 0.2

    def __post_init__(self) -> None:
        if self.rot_max <= 0 or self.trans_max <= 0:
            raise ValueError("pose range bounds must be positive")

    def as_vector(self) -> np.ndarray:
        return np.array([self.rot_max] * 3 + [self.trans_max] * 3)


class _Conv:
    def __init__(self, rng, c_in: int, c_out: int, k: int, scale: float = 2.0):
        std = np.sqrt(scale / (c_in * k * k))
        self.w = ad.Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)), requires_grad=True)
        self.b = ad.Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.conv2d(x, self.w, self.b)

    @property
    def params(self) -> list[ad.Tensor]:
        return [self.w, self.b]


class Trunk:
    """Shared feature extractor: 3x3 conv + ReLU stack, spatial size preserved."""

    def __init__(self, in_channels: int, widths: tuple[int, ...], rng):
        self.in_channels = in_channels
        self.layers = []
        c = in_channels
        for width in widths:
            self.layers.append(_Conv(rng, c, width, 3))
            c = width
        self.out_channels = c

    def forward(self, image: ad.Tensor) -> ad.Tensor:
        if image.ndim != 3 or image.shape[0] != self.in_channels:
            raise ValueError(
                f"trunk expects ({self.in_channels}, H, W), got {image.shape}"
            )
        z = image
        for layer in self.layers:
            z = ad.relu(layer(z))
        return z

    @property
    def params(self) -> list[ad.Tensor]:
        return [p for layer in self.layers for p in layer.params]


class DepthHead:
    """3x3 conv, 1x1 conv, then a per-pixel linear projection.

    With ``bins`` unset the single-channel output is squashed into
    [DEPTH_MIN, DEPTH_MAX] and returned as an (H, W) depth tensor. With
    ``bins`` set the head returns raw (bins, H, W) ordinal logits.
    """

    def __init__(self, in_channels: int, hidden: int, rng, bins: int | None = None):
        self.bins = bins
        out = 1 if bins is None else bins
        self.conv3 = _Conv(rng, in_channels, hidden, 3)
        self.conv1 = _Conv(rng, hidden, hidden, 1)
        self.proj = _Conv(rng, hidden, out, 1, scale=1.0)

    def forward(self, z: ad.Tensor) -> ad.Tensor:
        h = ad.relu(self.conv3(z))
        h = ad.relu(self.conv1(h))
        out = self.proj(h)
        if self.bins is not None:
            return out
        raw = ad.reshape(out, out.shape[1:])
        unit = ad.mul(ad.add(ad.softsign(raw), 1.0), 0.5)
        return ad.add(ad.mul(unit, DEPTH_MAX - DEPTH_MIN), DEPTH_MIN)

    @property
    def params(self) -> list[ad.Tensor]:
        return self.conv3.params + self.conv1.params + self.proj.params


class PoseHead:
    """Conv stack plus fully-connected layer, squashed into the pose box."""

    def __init__(
        self,
        in_channels: int,
        spatial: tuple[int, int],
        pose_range: PoseRange,
        rng,
        widths: tuple[int, ...] = (4, 2),
    ):
        self.pose_range = pose_range
        self.convs = []
        c = in_channels
        for width in widths:
            self.convs.append(_Conv(rng, c, width, 3))
            c = width
        features = c * spatial[0] * spatial[1]
        self.fc_w = ad.Tensor(
            rng.normal(0.0, np.sqrt(1.0 / features), (6, features)), requires_grad=True
        )
        self.fc_b = ad.Tensor(np.zeros(6), requires_grad=True)
        self._features = features

    def forward(self, z: ad.Tensor) -> ad.Tensor:
        h = z
        for conv in self.convs:
            h = ad.relu(conv(h))
        flat = ad.reshape(h, (self._features,))
        raw = ad.add(ad.matmul(self.fc_w, flat), self.fc_b)
        # range_i * (2 sigmoid(r_i) - 1): zero raw output means zero pose
        unit = ad.sub(ad.mul(ad.sigmoid(raw), 2.0), 1.0)
        return ad.mul(ad.constant(self.pose_range.as_vector()), unit)

    @property
    def params(self) -> list[ad.Tensor]:
        out = [p for conv in self.convs for p in conv.params]
        return out + [self.fc_w, self.fc_b]


@dataclass
class Networks:
    trunk: Trunk
    depth_head: DepthHead
    pose_head: PoseHead
    pose_range: PoseRange
    dorn_sharpness: float = 100.0

    @classmethod
    def build(
        cls,
        width: int,
        height: int,
        in_channels: int = 3,
        trunk_widths: tuple[int, ...] = (8, 8, 8),
        head_hidden: int = 8,
        bins: int | None = None,
        pose_range: PoseRange | None = None,
        seed: int = 0,
        dorn_sharpness: float = 100.0,
    ) -> "Networks":
        pose_range = pose_range or PoseRange()
        rng = np.random.default_rng(seed)
        trunk = Trunk(in_channels, tuple(trunk_widths), rng)
        depth_head = DepthHead(trunk.out_channels, head_hidden, rng, bins=bins)
        pose_head = PoseHead(trunk.out_channels, (height, width), pose_range, rng)
        return cls(trunk, depth_head, pose_head, pose_range, dorn_sharpness)

    def parameter_sets(self) -> tuple[list[ad.Tensor], list[ad.Tensor], list[ad.Tensor]]:
        return self.trunk.params, self.depth_head.params, self.pose_head.params

    def predict_depth_tensor(self, image: ad.Tensor) -> ad.Tensor:
        """Differentiable prediction: trunk + depth head (+ ordinal decode)."""
        out = self.depth_head.forward(self.trunk.forward(image))
        if self.depth_head.bins is None:
            return out
        return losses.dorn_soft_decode(ad.sigmoid(out), self.dorn_sharpness)

    def predict_depth(self, image: np.ndarray) -> np.ndarray:
        """Inference path: only the trunk and depth head run, nothing is taped."""
        return self.predict_depth_tensor(ad.constant(image)).data

    def named_parameters(self) -> dict[str, ad.Tensor]:
        named: dict[str, ad.Tensor] = {}
        for group, params in zip(
            ("trunk", "depth", "pose"), self.parameter_sets()
        ):
            for i, p in enumerate(params):
                named[f"{group}.{i}"] = p
        return named

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = sorted(set(named) ^ set(state))
        if missing:
            raise ValueError(f"checkpoint does not match the networks: {missing}")
        for key, tensor in named.items():
            value = np.asarray(state[key], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ValueError(f"shape mismatch for {key}")
            tensor.data = value.copy()


# checkpoint file: magic, version, tensor count, then per tensor a
# length-prefixed name, ndim, dims, and raw float64 data; all little-endian
_MAGIC = b"AVCL"
_VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(state)))
        for name in sorted(state):
            data = np.ascontiguousarray(state[name], dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("not a checkpoint file")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        state: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n_bytes = 8 * int(np.prod(shape)) if ndim else 8
            data = np.frombuffer(f.read(n_bytes), dtype="<f8").reshape(shape)
            state[name] = data.astype(np.float64)
        return state
