"""Metric BEV / voxel grid specifications and planar rigid transforms.

Cells are half-open ``[lo, hi)`` with lower-edge inclusion.  Arrays are
indexed ``[ix, iy(, iz), c]`` and flattened row-major (x, then y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float
    z_min: float = 0.0
    z_max: float = 10.0
    z_resolution: float = 2.5

    def __post_init__(self):
        if self.resolution <= 0 or self.z_resolution <= 0:
            raise ConfigurationError("grid resolutions must be positive")
        if self.x_max <= self.x_min or self.y_max <= self.y_min or self.z_max <= self.z_min:
            raise ConfigurationError("grid extents must be non-empty")
        for extent, res, name in ((self.x_max - self.x_min, self.resolution, "x"),
                                  (self.y_max - self.y_min, self.resolution, "y"),
                                  (self.z_max - self.z_min, self.z_resolution, "z")):
            n = extent / res
            if abs(n - round(n)) > 1e-9:
                raise ConfigurationError(f"{name} extent is not a whole number of cells")

    @classmethod
    def long(cls, **kw):
        return cls(-50.0, 50.0, -50.0, 50.0, 0.5, **kw)

    @classmethod
    def short(cls, **kw):
        return cls(-25.0, 25.0, -25.0, 25.0, 0.25, **kw)

    @classmethod
    def named(cls, name):
        if name == "long":
            return cls.long()
        if name == "short":
            return cls.short()
        raise ConfigurationError(f"unknown grid {name!r}; expected 'long' or 'short'")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.resolution))

    @property
    def ny(self) -> int:
        return int(round((self.y_max - self.y_min) / self.resolution))

    @property
    def nz(self) -> int:
        return int(round((self.z_max - self.z_min) / self.z_resolution))

    @property
    def shape(self):
        return self.nx, self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_centers(self):
        """Return ``(xs, ys)`` arrays of shape ``(nx, ny)``."""
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.resolution
        return np.meshgrid(xs, ys, indexing="ij")

    def cell_index(self, x, y):
        """Containing-cell indices; ``inside`` flags points within the extent."""
        ix = np.floor((np.asarray(x) - self.x_min) / self.resolution).astype(np.int64)
        iy = np.floor((np.asarray(y) - self.y_min) / self.resolution).astype(np.int64)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return ix, iy, inside

    def to_dict(self):
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "resolution": self.resolution, "z_min": self.z_min,
                "z_max": self.z_max, "z_resolution": self.z_resolution}


@dataclass(frozen=True)
class Pose2D:
    """Planar rigid transform of a local frame expressed in the world frame."""
    yaw: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def matrix(self):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]])

    def to_world(self, x, y):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return c * x - s * y + self.tx, s * x + c * y + self.ty

    def from_world(self, x, y):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = np.asarray(x, dtype=float) - self.tx
        dy = np.asarray(y, dtype=float) - self.ty
        return c * dx + s * dy, -s * dx + c * dy

    def relative_to(self, other: "Pose2D"):
        """Transform taking coordinates in ``self`` into coordinates in ``other``."""
        m = np.linalg.inv(other.matrix()) @ self.matrix()
        return Pose2D(math.atan2(m[1, 0], m[0, 0]), m[0, 2], m[1, 2])

    def as_tuple(self):
        return (self.yaw, self.tx, self.ty)


@dataclass(eq=False)
class VoxelGrid:
    values: np.ndarray  # (nx, ny, nz, C)
    spec: GridSpec
    dropped: int = 0


@dataclass(eq=False)
class BevGrid:
    values: np.ndarray  # (nx, ny, C)
    spec: GridSpec

    @property
    def channels(self) -> int:
        return self.values.shape[-1]


def warp_indices(src_spec: GridSpec, src_pose: Pose2D, dst_spec: GridSpec, dst_pose: Pose2D):
    """Map every source cell centre to its nearest destination cell.

    Returns ``(ix, iy, inside, offset)`` arrays shaped like the source grid;
    ``offset`` is the distance from the warped centre to the destination
    cell centre.
    """
    xs, ys = src_spec.cell_centers()
    wx, wy = src_pose.to_world(xs, ys)
    dx, dy = dst_pose.from_world(wx, wy)
    ix, iy, inside = dst_spec.cell_index(dx, dy)
    cx = dst_spec.x_min + (ix + 0.5) * dst_spec.resolution
    cy = dst_spec.y_min + (iy + 0.5) * dst_spec.resolution
    return ix, iy, inside, np.hypot(dx - cx, dy - cy)


def pull_back(values, src_spec, src_pose, dst_spec, dst_pose, fill=0.0):
    """Resample a destination-frame map onto the source grid (nearest cell).

    Each source cell reads the destination cell its centre falls in; cells
    that fall outside the destination grid receive ``fill``.
    """
    ix, iy, inside, _ = warp_indices(src_spec, src_pose, dst_spec, dst_pose)
    values = np.asarray(values)
    out = np.full(ix.shape + values.shape[2:], fill, dtype=values.dtype)
    out[inside] = values[ix[inside], iy[inside]]
    return out, inside
