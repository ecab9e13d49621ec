"""Sparse interaction via sliding windows.

Each drone compresses its BEV to one channel, scores local discrepancy
with a sliding window, and sends a collaborator only the cells where its
own information volume is high and the collaborator's is low.  Received
cells are aligned into the receiver grid, gaps are filled by normalised
Gaussian interpolation and all sources are fused with per-cell weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_ratio, check_same_shape, check_window
from .exceptions import ConfigurationError
from .grid import BevGrid, GridSpec, Pose2D, pull_back, warp_indices

INFO_MODES = ("literal", "abs-centered")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _values(grid):
    return grid.values if isinstance(grid, BevGrid) else np.asarray(grid, dtype=float)


def compress(bev) -> np.ndarray:
    """Per-cell channel mean."""
    values = _values(bev)
    if values.ndim != 3 or values.shape[-1] < 1:
        raise ValueError("expected an (X, Y, C) grid with C >= 1")
    return values.mean(axis=-1)


def info_volume(compressed, window=7, mode="literal") -> np.ndarray:
    """Sliding-window information volume of a compressed ``(X, Y)`` grid.

    The window is anchored at the cell and extends forward,
    ``(m + a, n + b)`` for ``a, b in [0, K)``, with clamp-to-edge padding.
    ``literal`` averages ``sigmoid(F[m+a, n+b] - F[m, n])`` and is 0.5 on
    homogeneous regions; ``abs-centered`` averages
    ``2 * sigmoid(|difference|) - 1`` and is 0 there.
    """
    k = check_window(window)
    if mode not in INFO_MODES:
        raise ConfigurationError(f"unknown information mode {mode!r}; expected one of {INFO_MODES}")
    f = np.asarray(compressed, dtype=float)
    if f.ndim != 2:
        raise ValueError("compressed grid must be 2-D")
    nx, ny = f.shape
    padded = np.pad(f, ((0, k - 1), (0, k - 1)), mode="edge")
    acc = np.zeros_like(f)
    for a in range(k):
        for b in range(k):
            diff = padded[a:a + nx, b:b + ny] - f
            if mode == "literal":
                acc = acc + sigmoid(diff)
            else:
                acc = acc + (2.0 * sigmoid(np.abs(diff)) - 1.0)
    return acc / (k * k)


def complement_score(i_sender, i_receiver) -> np.ndarray:
    """``I_sender * (1 - I_receiver)``; both maps must share one grid frame."""
    i_sender = np.asarray(i_sender, dtype=float)
    i_receiver = np.asarray(i_receiver, dtype=float)
    check_same_shape(i_sender, i_receiver, ("sender map", "receiver map"))
    return i_sender * (1.0 - i_receiver)


def topk_count(ratio, n_cells) -> int:
    check_ratio(ratio)
    # the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(ratio * n_cells + 1e-9))


def select_topk(scores, ratio) -> np.ndarray:
    """Boolean mask of the ``floor(ratio * X * Y)`` highest scores.

    Ties go to the lower row-major index.
    """
    scores = np.asarray(scores, dtype=float)
    n = topk_count(ratio, scores.size)
    order = np.argsort(-scores.ravel(), kind="stable")[:n]
    mask = np.zeros(scores.size, dtype=bool)
    mask[order] = True
    return mask.reshape(scores.shape)


@dataclass(eq=False)
class SparsePacket:
    sender_id: int
    frame: int
    cell_indices: np.ndarray  # (n, 2) int, strictly increasing row-major
    features: np.ndarray  # (n, C)
    sender_pose: Pose2D
    truncated: int = 0  # cells removed to respect a byte budget
    scores: np.ndarray | None = field(default=None, repr=False)  # not on the wire

    def __post_init__(self):
        idx = np.asarray(self.cell_indices, dtype=np.int64).reshape(-1, 2)
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or len(feats) != len(idx):
            raise ValueError("features must be (cell_count, C)")
        self.cell_indices = idx
        self.features = feats

    @property
    def cell_count(self) -> int:
        return len(self.cell_indices)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def check_sorted(self, ny):
        flat = self.cell_indices[:, 0] * ny + self.cell_indices[:, 1]
        return bool(np.all(np.diff(flat) > 0))


def make_packet(sender_id, frame, bev, mask, sender_pose, scores=None, max_cells=None):
    """Package the masked cells of ``bev``; keep at most ``max_cells``.

    When the cap bites, the lowest-score cells are dropped first (ties drop
    the higher index) and the count is recorded in ``truncated``.
    """
    values = _values(bev)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape[:2]:
        raise ValueError("mask shape does not match the BEV grid")
    flat = np.flatnonzero(mask)
    truncated = 0
    if max_cells is not None and flat.size > max_cells:
        keep = max(int(max_cells), 0)
        if scores is None:
            chosen = flat[:keep]
        else:
            s = np.asarray(scores, dtype=float).ravel()[flat]
            chosen = np.sort(flat[np.argsort(-s, kind="stable")[:keep]])
        truncated = flat.size - chosen.size
        flat = chosen
    ny = values.shape[1]
    idx = np.stack([flat // ny, flat % ny], axis=1)
    feats = values.reshape(-1, values.shape[-1])[flat]
    sel = None if scores is None else np.asarray(scores, dtype=float).ravel()[flat]
    return SparsePacket(int(sender_id), int(frame), idx, feats, sender_pose, truncated, sel)


@dataclass(eq=False)
class AlignedCells:
    values: np.ndarray  # (X, Y, C) receiver grid, zero where undefined
    defined: np.ndarray  # (X, Y) bool
    dropped: int  # packet cells landing outside the receiver grid


def align_packet(packet: SparsePacket, receiver_pose: Pose2D, receiver_spec: GridSpec,
                 sender_spec: GridSpec | None = None) -> AlignedCells:
    """Move packet cells into the receiver grid by nearest-cell assignment.

    When two cells land in the same receiver cell, the one whose warped
    centre is closer to that cell's centre wins (then the earlier cell).
    """
    sender_spec = sender_spec or receiver_spec
    if not math.isclose(sender_spec.resolution, receiver_spec.resolution):
        raise ConfigurationError("sender and receiver grids must share a cell size")
    values = np.zeros(receiver_spec.shape + (packet.channels,))
    defined = np.zeros(receiver_spec.shape, dtype=bool)
    if packet.cell_count == 0:
        return AlignedCells(values, defined, 0)
    ix, iy, inside, offset = warp_indices(sender_spec, packet.sender_pose,
                                          receiver_spec, receiver_pose)
    sx, sy = packet.cell_indices[:, 0], packet.cell_indices[:, 1]
    dx, dy, ok, off = ix[sx, sy], iy[sx, sy], inside[sx, sy], offset[sx, sy]
    src = np.flatnonzero(ok)
    dest = dx[src] * receiver_spec.ny + dy[src]
    order = np.lexsort((src, off[src]))
    _, first = np.unique(dest[order], return_index=True)
    winners = src[order[first]]
    wx, wy = dx[winners], dy[winners]
    values[wx, wy] = packet.features[winners]
    defined[wx, wy] = True
    return AlignedCells(values, defined, int(packet.cell_count - src.size))


def gaussian_infill(values, defined, sigma=1.0, radius=2):
    """Fill undefined cells from defined cells within ``radius`` (cells).

    Undefined cells take ``sum_i (w_i / sum_j w_j) f_i`` with
    ``w = exp(-d^2 / (2 sigma^2))``; defined cells are left untouched.
    Returns ``(filled, empty)`` where ``empty`` flags cells with no defined
    neighbour (left at zero).
    """
    if sigma <= 0:
        raise ConfigurationError("infill sigma must be positive")
    if radius < 1 or int(radius) != radius:
        raise ConfigurationError("infill radius must be an integer >= 1")
    values = np.asarray(values, dtype=float)
    defined = np.asarray(defined, dtype=bool)
    if values.shape[:2] != defined.shape:
        raise ValueError("defined mask shape does not match values")
    nx, ny = defined.shape
    r = int(radius)
    offsets = [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
               if (a, b) != (0, 0) and a * a + b * b <= r * r]
    pad_d = np.pad(defined.astype(float), r)
    pad_v = np.pad(np.where(defined[..., None], values, 0.0), ((r, r), (r, r), (0, 0)))
    weights = [math.exp(-(a * a + b * b) / (2.0 * sigma * sigma)) for a, b in offsets]
    den = np.zeros((nx, ny))
    for (a, b), w in zip(offsets, weights):
        den = den + w * pad_d[r + a:r + a + nx, r + b:r + b + ny]
    safe = np.where(den > 0, den, 1.0)
    num = np.zeros_like(values)
    for (a, b), w in zip(offsets, weights):
        contrib = (w * pad_d[r + a:r + a + nx, r + b:r + b + ny] / safe)[..., None]
        num = num + contrib * pad_v[r + a:r + a + nx, r + b:r + b + ny]
    fill = ~defined & (den > 0)
    out = np.where(defined[..., None], values, 0.0)
    out[fill] = num[fill]
    return out, ~defined & (den == 0)


def fusion_weights(local, aligned, available=None, weight_vector=None):
    """Normalised per-cell contribution weights for ``[local] + aligned``.

    Source ``j`` scores ``sigmoid(<w, [local; source_j]>)`` per cell with
    ``w`` defaulting to ``1 / (2C)`` everywhere.  ``available`` (one mask
    per collaborator) zeroes the score of cells a collaborator could not
    supply; the local source is always available.
    """
    local = _values(local)
    sources = [local] + [_values(a) for a in aligned]
    c = local.shape[-1]
    for s in sources:
        check_same_shape(s, local, ("source", "local"))
    w = np.full(2 * c, 1.0 / (2 * c)) if weight_vector is None else np.asarray(weight_vector, float)
    if w.shape != (2 * c,):
        raise ValueError(f"weight vector must have length {2 * c}")
    base = local @ w[:c]
    raw = [sigmoid(base + s @ w[c:]) for s in sources]
    if available is not None:
        if len(available) != len(aligned):
            raise ValueError("one availability mask per collaborator is required")
        raw = [raw[0]] + [np.where(m, r, 0.0) for r, m in zip(raw[1:], available)]
    total = raw[0]
    for r in raw[1:]:
        total = total + r
    return [r / total for r in raw]


def aggregate(weights, sources) -> np.ndarray:
    """Per-cell convex combination ``sum_j W_j * source_j``."""
    if len(weights) != len(sources) or not sources:
        raise ValueError("need one weight map per source")
    out = np.zeros_like(_values(sources[0]))
    for w, s in zip(weights, sources):
        out = out + np.asarray(w)[..., None] * _values(s)
    return out


class SparseInteraction(BaseEstimator):
    """Per-frame sparse exchange between drones sharing one grid spec.

    ``score(bev)`` gives a drone's information map, ``packet(...)``
    builds the packet from one sender to one receiver and ``fuse(...)``
    merges received packets into a receiver's BEV.
    """

    def __init__(self, window=7, ratio=0.25, info_mode="literal", infill_sigma=1.0,
                 infill_radius=1, grid=None):
        self.window = window
        self.ratio = ratio
        self.info_mode = info_mode
        self.infill_sigma = infill_sigma
        self.infill_radius = infill_radius
        self.grid = grid

    @property
    def spec(self):
        return self.grid or GridSpec.long()

    def score(self, bev):
        return info_volume(compress(bev), self.window, self.info_mode)

    def scores_for(self, i_sender, sender_pose, i_receiver, receiver_pose):
        """Complement scores in the sender grid (receiver map pulled back).

        Sender cells outside the receiver grid score 0.
        """
        pulled, inside = pull_back(i_receiver, self.spec, sender_pose, self.spec, receiver_pose)
        return np.where(inside, complement_score(i_sender, pulled), 0.0)

    def packet(self, sender_id, frame, bev, sender_pose, i_sender, i_receiver,
               receiver_pose, max_cells=None):
        scores = self.scores_for(i_sender, sender_pose, i_receiver, receiver_pose)
        mask = select_topk(scores, self.ratio)
        return make_packet(sender_id, frame, bev, mask, sender_pose, scores, max_cells)

    def fuse(self, local, receiver_pose, packets):
        """Fuse ``packets`` into the receiver's ``local`` BEV.

        Returns ``(fused, info)`` where ``info`` carries per-source weights
        and alignment statistics.
        """
        local_v = _values(local)
        aligned, available, dropped = [], [], 0
        for p in packets:
            cells = align_packet(p, receiver_pose, self.spec)
            filled, empty = gaussian_infill(cells.values, cells.defined,
                                            self.infill_sigma, self.infill_radius)
            aligned.append(filled)
            available.append(~empty)
            dropped += cells.dropped
        weights = fusion_weights(local_v, aligned, available)
        fused = aggregate(weights, [local_v] + aligned)
        return fused, {"weights": weights, "dropped": dropped}
