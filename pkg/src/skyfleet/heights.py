"""Categorical per-pixel height / depth distributions and oracle estimators.

Distributions are stored as a band: ``offset[v, u]`` is the first bin index
and ``probs[v, u, :]`` the probabilities of bins ``offset .. offset + L``.
This keeps memory proportional to the number of bins with support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator

_EPS = 1e-9


@dataclass(frozen=True)
class Bins:
    """``count`` uniform half-open bins over ``[low, high)``."""
    low: float
    high: float
    count: int

    @property
    def width(self) -> float:
        return (self.high - self.low) / self.count

    @property
    def edges(self):
        return self.low + np.arange(self.count + 1) * self.width

    @property
    def lower_edges(self):
        return self.low + np.arange(self.count) * self.width

    @property
    def centers(self):
        return self.low + (np.arange(self.count) + 0.5) * self.width

    def index(self, value):
        """Containing bin; the small epsilon absorbs ``0.3 / 0.1 = 2.999..``."""
        idx = np.floor((np.asarray(value, dtype=float) - self.low) / self.width + _EPS)
        return idx.astype(np.int64)

    def to_dict(self):
        return {"low": self.low, "high": self.high, "count": self.count}


HEIGHT_BINS = Bins(0.0, 10.0, 100)
DEPTH_BINS = Bins(1.0, 100.0, 100)


@dataclass(eq=False)
class HeightDistribution:
    offset: np.ndarray  # (H, W) int
    probs: np.ndarray  # (H, W, L)
    bins: Bins

    def dense(self):
        h, w, band = self.probs.shape
        out = np.zeros((h, w, self.bins.count))
        rows, cols = np.mgrid[0:h, 0:w]
        for k in range(band):
            idx = self.offset + k
            ok = (idx >= 0) & (idx < self.bins.count)
            out[rows[ok], cols[ok], idx[ok]] += self.probs[..., k][ok]
        return out

    def dense_pixel(self, u, v):
        out = np.zeros(self.bins.count)
        band = self.probs.shape[-1]
        idx = self.offset[v, u] + np.arange(band)
        ok = (idx >= 0) & (idx < self.bins.count)
        out[idx[ok]] = self.probs[v, u, ok]
        return out

    @classmethod
    def from_dense(cls, probs, bins):
        probs = np.asarray(probs, dtype=float)
        return cls(np.zeros(probs.shape[:2], dtype=np.int64), probs, bins)

    @classmethod
    def one_hot(cls, index, bins):
        index = np.asarray(index, dtype=np.int64)
        return cls(index.copy(), np.ones(index.shape + (1,)), bins)

    @classmethod
    def uniform(cls, shape, bins):
        return cls(np.zeros(shape, dtype=np.int64),
                   np.full(tuple(shape) + (bins.count,), 1.0 / bins.count), bins)


def discretized_gaussian(values, sigma, bins: Bins, truncate=4.0):
    """Banded Gaussian bin masses around ``values``, renormalised to sum 1.

    Each bin receives the normal probability mass of its interval; mass
    outside ``[low, high)`` and beyond ``truncate`` sigmas is discarded
    before renormalising.
    """
    values = np.asarray(values, dtype=float)
    centre = np.clip(bins.index(values), 0, bins.count - 1)
    if sigma <= 0:
        return centre, np.ones(values.shape + (1,))
    uniq, inverse = np.unique(values, return_inverse=True)
    if uniq.size < values.size:
        offset, mass = discretized_gaussian(uniq, sigma, bins, truncate)
        inverse = inverse.reshape(values.shape)
        return offset[inverse], mass[inverse]
    half = int(math.ceil(truncate * sigma / bins.width))
    ks = np.arange(-half, half + 1)
    idx = centre[..., None] + ks
    lo = bins.low + idx * bins.width
    mass = ndtr((lo + bins.width - values[..., None]) / sigma) - ndtr((lo - values[..., None]) / sigma)
    mass = np.where((idx >= 0) & (idx < bins.count), mass, 0.0)
    mass /= mass.sum(axis=-1, keepdims=True)
    return centre - half, mass


class OracleHeightEstimator(BaseEstimator):
    """Stand-in for a learned height head: reads the rendered true height.

    With ``noise_sigma == 0`` every pixel is one-hot at the bin containing
    its true height; otherwise mass follows a discretised Gaussian centred on
    it.  Heights past the last bin are clamped and counted in ``n_clamped_``.
    """

    def __init__(self, noise_sigma=0.0, bins=HEIGHT_BINS, truncate=4.0):
        self.noise_sigma = noise_sigma
        self.bins = bins
        self.truncate = truncate

    def fit(self, view=None, y=None):
        return self

    def predict(self, view) -> HeightDistribution:
        h = np.asarray(view.true_height, dtype=float)
        out_of_range = (h < self.bins.low) | (self.bins.index(h) >= self.bins.count)
        self.n_clamped_ = int(np.count_nonzero(out_of_range & view.validity))
        h = np.clip(h, self.bins.low, self.bins.high - 0.5 * self.bins.width)
        offset, probs = discretized_gaussian(h, self.noise_sigma, self.bins, self.truncate)
        return HeightDistribution(offset, probs, self.bins)


class FlatGroundEstimator(BaseEstimator):
    """Every pixel at height zero: the ground prior without height cues."""

    def __init__(self, bins=HEIGHT_BINS):
        self.bins = bins

    def fit(self, view=None, y=None):
        return self

    def predict(self, view) -> HeightDistribution:
        return HeightDistribution.one_hot(np.zeros(view.shape, dtype=np.int64), self.bins)


class OracleDepthEstimator(BaseEstimator):
    """Depth-bin distribution for the plain lift-splat baseline.

    ``mode="oracle"`` puts all mass on the bin nearest the true hit distance,
    ``mode="uniform"`` spreads it evenly over every bin.
    """

    def __init__(self, mode="oracle", bins=DEPTH_BINS):
        self.mode = mode
        self.bins = bins

    def fit(self, view=None, y=None):
        return self

    def predict(self, view) -> HeightDistribution:
        if self.mode == "uniform":
            return HeightDistribution.uniform(view.shape, self.bins)
        if self.mode != "oracle":
            raise ValueError(f"unknown depth mode {self.mode!r}")
        depth = np.nan_to_num(view.depth, nan=self.bins.low)
        nearest = np.rint((depth - self.bins.centers[0]) / self.bins.width).astype(np.int64)
        return HeightDistribution.one_hot(np.clip(nearest, 0, self.bins.count - 1), self.bins)
