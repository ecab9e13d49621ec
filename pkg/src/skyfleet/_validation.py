"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, DomainError


def check_array(x, ndim=None, shape=None, dtype=float, name="array", finite=True):
    """Return ``x`` as an ndarray, checking dimensionality and finiteness."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(arr.shape, shape)):
            if want is not None and got != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape} (axis {axis})")
    if finite and arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {names[0]} {np.shape(a)} vs {names[1]} {np.shape(b)}")


def check_rotation(rotation, tol=1e-9):
    r = check_array(rotation, shape=(3, 3), name="rotation")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0.0):
        raise ConfigurationError("rotation is not orthonormal within 1e-9")
    return r


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ConfigurationError(f"{name} must be {'> 0' if strict else '>= 0'}, got {value}")
    return value


def check_ratio(ratio):
    ratio = float(ratio)
    if not 0.0 < ratio <= 1.0:
        raise DomainError(f"ratio must lie in (0, 1], got {ratio}")
    return ratio


def check_window(window):
    if int(window) != window or window < 3 or window % 2 == 0:
        raise DomainError(f"window must be an odd integer >= 3, got {window}")
    return int(window)
