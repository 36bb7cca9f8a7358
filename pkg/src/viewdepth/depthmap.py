"""Depth map container shared by every module in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Working depth range of the toolkit, in meters. Synthetic scenes stay well
# inside it and predicted depths are squashed into it.
DEPTH_MIN = 0.1
DEPTH_MAX = 10.0


class DegenerateMaskError(ValueError):
    """A masked reduction was left with no valid pixels to work on."""


@dataclass
class DepthMap:
    """Dense H x W grid of metric depths with a per-pixel validity mask.

    ``values`` holds meters. Entries where ``valid`` is False are
    placeholders and carry no meaning; every consumer in this package
    gathers through the mask and never reads them.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError("depth values must be a 2-D array")
        if self.valid.shape != self.values.shape:
            raise ValueError(
                f"mask shape {self.valid.shape} != values shape {self.values.shape}"
            )
        inside = self.values[self.valid]
        if inside.size and (not np.all(np.isfinite(inside)) or np.any(inside <= 0.0)):
            raise ValueError("valid depth entries must be finite and > 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMap":
        """Wrap a dense array of strictly positive depths, all pixels valid."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy())
