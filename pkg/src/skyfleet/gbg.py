"""Ground-prior BEV generation.

Per pixel, every height bin ``h_b`` is turned into a depth along the pixel
ray with ``d = D_ub * (1 - h_b / H)`` (bins at or above the camera are
skipped), the pixel feature is placed there with the bin's probability,
splatted into a voxel grid and sum-pooled over height.  The plain
lift-splat baseline places candidates at depth-bin centres instead.

The outer product of features and depth candidates is never materialised:
candidates reference their pixel's feature row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .camera import CameraModel, ground_prior_maps, pixel_rays
from .exceptions import ConfigurationError
from .grid import BevGrid, GridSpec, Pose2D, VoxelGrid
from .heights import (HEIGHT_BINS, FlatGroundEstimator, HeightDistribution,
                      OracleDepthEstimator, OracleHeightEstimator)

MODES = ("ground-prior", "flat-ground", "depth-bin")
_GROUPED_LIMIT = 16_000_000


@dataclass(eq=False)
class FrustumCandidates:
    points: np.ndarray  # (M, 3) world metres
    weights: np.ndarray  # (M,)
    pixel: np.ndarray  # (M,) row into ``features``
    features: np.ndarray  # (K, C) feature table
    pruned: int = 0  # candidates discarded before splatting (outside z extent)

    def __len__(self):
        return len(self.weights)

    @property
    def channels(self):
        return self.features.shape[1]

    @classmethod
    def empty(cls, channels):
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64),
                   np.zeros((0, channels)))

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        offsets = np.cumsum([0] + [len(p.features) for p in parts[:-1]])
        return cls(np.concatenate([p.points for p in parts]),
                   np.concatenate([p.weights for p in parts]),
                   np.concatenate([p.pixel + o for p, o in zip(parts, offsets)]),
                   np.concatenate([p.features for p in parts]),
                   sum(p.pruned for p in parts))


def _lift(view, dist: HeightDistribution, camera, depth_of, snap_z=None,
          z_extent=None, chunk=16384):
    h, w = camera.height, camera.width
    if view.shape != (h, w) or dist.offset.shape != (h, w):
        raise ValueError("view, distribution and camera image sizes disagree")
    channels = view.feature_table.shape[-1]
    key = view.feature_key.ravel()
    v, u = np.mgrid[0:h, 0:w]
    dirs = pixel_rays(camera, u, v).reshape(-1, 3)
    valid = view.validity.ravel() & (dirs[:, 2] < 0)
    pix_all = np.flatnonzero(valid)
    if pix_all.size == 0:
        return FrustumCandidates.empty(channels)
    band = dist.probs.shape[-1]
    offset = dist.offset.ravel()
    probs = dist.probs.reshape(-1, band)
    origin = camera.origin
    pts_out, w_out, pix_out = [], [], []
    pruned = 0
    for start in range(0, pix_all.size, chunk):
        pix = pix_all[start:start + chunk]
        b = offset[pix][:, None] + np.arange(band)
        wts = probs[pix]
        ok = (b >= 0) & (b < dist.bins.count) & (wts > 0)
        bc = np.clip(b, 0, dist.bins.count - 1)
        depth, keep = depth_of(pix, bc)
        ok &= keep
        pts = origin + depth[..., None] * dirs[pix][:, None, :]
        if snap_z is not None:
            pts[..., 2] = snap_z[bc]
        if z_extent is not None:
            inside = (pts[..., 2] >= z_extent[0]) & (pts[..., 2] < z_extent[1])
            pruned += int(np.count_nonzero(ok & ~inside))
            ok &= inside
        pts_out.append(pts[ok])
        w_out.append(wts[ok])
        pix_out.append(np.broadcast_to(key[pix][:, None], ok.shape)[ok])
    return FrustumCandidates(np.concatenate(pts_out), np.concatenate(w_out),
                             np.concatenate(pix_out), view.feature_table, pruned)


def lift(view, heights: HeightDistribution, camera: CameraModel, maps=None, z_extent=None):
    """Lift pixel features along height-bin candidates converted to depth.

    Bin heights are the lower bin edges, so bin 0 is the ground itself.
    World points get ``z`` equal to the bin height exactly.
    """
    if camera.altitude <= 0:
        raise ConfigurationError(f"altitude must be > 0, got {camera.altitude}")
    maps = maps if maps is not None else ground_prior_maps(camera)
    d_ub = maps.depth_upper_bound.ravel()
    hb = heights.bins.lower_edges
    altitude = camera.altitude

    def depth_of(pix, b):
        return d_ub[pix][:, None] * (1.0 - hb[b] / altitude), hb[b] < altitude

    return _lift(view, heights, camera, depth_of, snap_z=hb, z_extent=z_extent)


def lift_depth_bins(view, depths: HeightDistribution, camera: CameraModel, z_extent=None):
    """Vanilla lift: candidates at depth-bin centres along each pixel ray."""
    centers = depths.bins.centers

    def depth_of(pix, b):
        return centers[b], np.ones(b.shape, dtype=bool)

    return _lift(view, depths, camera, depth_of, z_extent=z_extent)


def splat(candidates: FrustumCandidates, spec: GridSpec, pose: Pose2D = Pose2D()) -> VoxelGrid:
    """Accumulate ``weight * feature`` into the voxel containing each point.

    Accumulation follows candidate order (pixel row-major, then bin), so the
    result is bit-reproducible.  Points outside the grid are dropped and
    counted in ``VoxelGrid.dropped``.
    """
    channels = candidates.channels
    nx, ny, nz = spec.nx, spec.ny, spec.nz
    values = np.zeros((nx, ny, nz, channels))
    if len(candidates) == 0:
        return VoxelGrid(values, spec, candidates.pruned)
    gx, gy = pose.from_world(candidates.points[:, 0], candidates.points[:, 1])
    ix, iy, inside = spec.cell_index(gx, gy)
    iz = np.floor((candidates.points[:, 2] - spec.z_min) / spec.z_resolution).astype(np.int64)
    inside &= (iz >= 0) & (iz < nz)
    flat = ((ix * ny + iy) * nz + iz)[inside]
    w = candidates.weights[inside]
    rows = candidates.pixel[inside]
    n_vox = nx * ny * nz
    n_rows = len(candidates.features)
    out = values.reshape(-1, channels)
    if n_rows * n_vox <= _GROUPED_LIMIT:
        # few distinct features: sum weights per (voxel, feature row), then expand
        wsum = np.bincount(flat * n_rows + rows, weights=w, minlength=n_vox * n_rows)
        out[:] = wsum.reshape(n_vox, n_rows) @ candidates.features
    else:
        feats = candidates.features[rows]
        for c in range(channels):
            out[:, c] = np.bincount(flat, weights=w * feats[:, c], minlength=n_vox)
    dropped = int(np.count_nonzero(~inside)) + candidates.pruned
    return VoxelGrid(values, spec, dropped)


def sum_pool_z(voxels: VoxelGrid) -> BevGrid:
    """Collapse the height axis by summation (z ascending)."""
    acc = np.zeros(voxels.values.shape[:2] + voxels.values.shape[3:])
    for k in range(voxels.values.shape[2]):
        acc = acc + voxels.values[:, :, k, :]
    return BevGrid(acc, voxels.spec)


def generate_bev_baseline(view, camera, depth_estimator=None, spec=None, pose=Pose2D()):
    """Plain depth-bin lift-splat for comparison with the ground prior."""
    spec = spec or GridSpec.long()
    depth_estimator = depth_estimator or OracleDepthEstimator()
    cands = lift_depth_bins(view, depth_estimator.predict(view), camera,
                            z_extent=(spec.z_min, spec.z_max))
    return sum_pool_z(splat(cands, spec, pose))


class GroundPriorBEV(TransformerMixin, BaseEstimator):
    """BEV generator bound to one camera.

    ``fit(camera)`` precomputes the per-pixel ground prior (depth upper bound
    and viewing angle); ``transform(view)`` lifts, splats and pools one
    rendered view into a BEV grid.

    Parameters
    ----------
    grid : GridSpec
    mode : {"ground-prior", "flat-ground", "depth-bin"}
    height_estimator : estimator with ``predict(view) -> HeightDistribution``
        Used in ``ground-prior`` mode; defaults to the noiseless oracle.
    depth_estimator : estimator, used in ``depth-bin`` mode.
    bev_pose : Pose2D of the BEV frame in the world.
    """

    def __init__(self, grid=None, mode="ground-prior", height_estimator=None,
                 depth_estimator=None, bev_pose=None):
        self.grid = grid
        self.mode = mode
        self.height_estimator = height_estimator
        self.depth_estimator = depth_estimator
        self.bev_pose = bev_pose

    def fit(self, camera, y=None):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown BEV mode {self.mode!r}; expected one of {MODES}")
        if not isinstance(camera, CameraModel):
            raise TypeError("fit expects a CameraModel")
        if camera.altitude <= 0:
            raise ConfigurationError(f"altitude must be > 0, got {camera.altitude}")
        self.camera_ = camera
        self.ground_prior_ = ground_prior_maps(camera)
        self.grid_ = self.grid or GridSpec.long()
        self.pose_ = self.bev_pose or Pose2D()
        return self

    def lift(self, view) -> FrustumCandidates:
        check_is_fitted(self, "ground_prior_")
        z_extent = (self.grid_.z_min, self.grid_.z_max)
        if self.mode == "depth-bin":
            est = self.depth_estimator or OracleDepthEstimator()
            return lift_depth_bins(view, est.predict(view), self.camera_, z_extent=z_extent)
        if self.mode == "flat-ground":
            est = FlatGroundEstimator(bins=getattr(self.height_estimator, "bins", HEIGHT_BINS))
        else:
            est = self.height_estimator or OracleHeightEstimator()
        return lift(view, est.predict(view), self.camera_, maps=self.ground_prior_,
                    z_extent=z_extent)

    def transform(self, view, pose=None) -> BevGrid:
        cands = self.lift(view)
        return sum_pool_z(splat(cands, self.grid_, pose or self.pose_))
