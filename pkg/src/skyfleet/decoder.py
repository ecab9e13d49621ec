"""Deterministic constant-velocity forecaster over fused BEV history.

Occupancy is read from the fused features, split into 8-connected
instances, linked across history frames by nearest centroid and pushed
forward with each instance's mean displacement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .grid import BevGrid, GridSpec
from .metrics import gated_assignment
from .scene import T_FUTURE

OCCUPANCY_RULES = ("vehicle-fraction", "magnitude")
_EIGHT = np.ones((3, 3), dtype=int)


@dataclass(eq=False)
class Forecast:
    segmentation: np.ndarray  # (T2, X, Y) bool
    instance_ids: np.ndarray  # (T2, X, Y) int
    flow: np.ndarray  # (T2, X, Y, 2) metres per frame
    present_ids: np.ndarray  # (X, Y) int, instances at the last history frame
    centers: np.ndarray  # (n, 2) metres, grid frame, ordered by id
    velocities: np.ndarray  # (n, 2) metres per frame


def label_instances(mask):
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    return labels.astype(np.int64), n


def instance_centroids(labels, n, spec: GridSpec):
    """Mean cell-centre position of every label ``1..n`` (grid frame, metres)."""
    if n == 0:
        return np.zeros((0, 2))
    xs, ys = spec.cell_centers()
    idx = np.arange(1, n + 1)
    cx = ndimage.mean(xs, labels, idx)
    cy = ndimage.mean(ys, labels, idx)
    return np.column_stack([cx, cy])


class ConstantVelocityDecoder(BaseEstimator):
    """Forecast ``horizon`` future frames from T1 fused BEVs.

    Parameters
    ----------
    threshold : occupancy threshold.  With the ``vehicle-fraction`` rule a
        cell is occupied when vehicle evidence exceeds this share of the
        class evidence; with ``magnitude`` when the feature L2 norm exceeds
        ``threshold * embedding_norm``.
    match_gate : maximum centroid displacement (m) linking instances
        between consecutive history frames.
    min_cells : components smaller than this are discarded as clutter.
    """

    def __init__(self, grid=None, threshold=0.85, match_gate=3.0, horizon=T_FUTURE,
                 rule="vehicle-fraction", vehicle_channel=2, ground_channel=1,
                 embedding_norm=math.sqrt(3.0), min_cells=6):
        self.grid = grid
        self.threshold = threshold
        self.match_gate = match_gate
        self.horizon = horizon
        self.rule = rule
        self.vehicle_channel = vehicle_channel
        self.ground_channel = ground_channel
        self.embedding_norm = embedding_norm
        self.min_cells = min_cells

    @property
    def spec(self):
        return self.grid or GridSpec.long()

    def fit(self, history=None, y=None):
        return self

    def occupancy(self, bev) -> np.ndarray:
        values = bev.values if isinstance(bev, BevGrid) else np.asarray(bev, dtype=float)
        if self.rule == "magnitude":
            return np.linalg.norm(values, axis=-1) > self.threshold * self.embedding_norm
        if self.rule != "vehicle-fraction":
            raise ValueError(f"unknown occupancy rule {self.rule!r}; expected one of {OCCUPANCY_RULES}")
        veh = values[..., self.vehicle_channel]
        grd = values[..., self.ground_channel]
        total = veh + grd
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(total > 0, veh / total, 0.0)
        return (veh > 1e-12) & (share > self.threshold)

    def instances(self, mask):
        labels, n = label_instances(mask)
        if self.min_cells > 1 and n:
            sizes = np.bincount(labels.ravel(), minlength=n + 1)
            keep = np.flatnonzero(sizes[1:] >= self.min_cells) + 1
            remap = np.zeros(n + 1, dtype=np.int64)
            remap[keep] = np.arange(1, keep.size + 1)
            labels, n = remap[labels], int(keep.size)
        return labels, n

    def predict(self, history) -> Forecast:
        return self.predict_masks([self.occupancy(b) for b in history])

    def predict_masks(self, masks) -> Forecast:
        spec = self.spec
        shape = spec.shape
        horizon = int(self.horizon)
        if not masks:
            empty = np.zeros((horizon,) + shape, dtype=bool)
            return Forecast(empty, np.zeros(empty.shape, dtype=np.int64),
                            np.zeros(empty.shape + (2,)), np.zeros(shape, dtype=np.int64),
                            np.zeros((0, 2)), np.zeros((0, 2)))
        frames = [self.instances(m) for m in masks]
        centers = [instance_centroids(lab, n, spec) for lab, n in frames]
        present, n_present = frames[-1]
        # follow each present instance back through the history
        chain_start = centers[-1].copy()
        chain_steps = np.zeros(n_present, dtype=int)
        current = {i: i for i in range(n_present)}  # present index -> index in frame t
        for t in range(len(frames) - 1, 0, -1):
            prev, cur = centers[t - 1], centers[t]
            if not current or len(prev) == 0:
                break
            alive = sorted(current)
            cost = np.linalg.norm(cur[[current[a] for a in alive]][:, None, :] - prev[None, :, :],
                                  axis=-1)
            links = dict(gated_assignment(cost, self.match_gate))
            nxt = {}
            for row, a in enumerate(alive):
                if row in links:
                    nxt[a] = links[row]
                    chain_start[a] = prev[links[row]]
                    chain_steps[a] += 1
            current = nxt
        with np.errstate(invalid="ignore"):
            vel = np.where(chain_steps[:, None] > 0,
                           (centers[-1] - chain_start) / np.maximum(chain_steps, 1)[:, None], 0.0)
        seg = np.zeros((horizon,) + shape, dtype=bool)
        ids = np.zeros((horizon,) + shape, dtype=np.int64)
        flow = np.zeros((horizon,) + shape + (2,))
        cells = [np.nonzero(present == i + 1) for i in range(n_present)]
        for k in range(1, horizon + 1):
            # higher ids first so the lower id wins where shifted masks collide
            for i in range(n_present - 1, -1, -1):
                sx = int(round(k * vel[i, 0] / spec.resolution))
                sy = int(round(k * vel[i, 1] / spec.resolution))
                x = cells[i][0] + sx
                y = cells[i][1] + sy
                ok = (x >= 0) & (x < spec.nx) & (y >= 0) & (y < spec.ny)
                seg[k - 1, x[ok], y[ok]] = True
                ids[k - 1, x[ok], y[ok]] = i + 1
                flow[k - 1, x[ok], y[ok]] = vel[i]
        return Forecast(seg, ids, flow, present, centers[-1], vel)
