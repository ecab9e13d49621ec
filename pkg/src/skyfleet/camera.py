"""Pinhole camera geometry over a flat ground plane.

Conventions
-----------
World frame is z-up, the ground is the plane ``z = 0`` and a drone flies at
``z = +H``.  The camera frame follows OpenCV: x right, y down, z forward.
``rotation`` maps camera-frame directions to world-frame directions and
``translation`` is the camera origin in the world frame, so a pixel ray is::

    direction = normalize(R @ inv(K) @ [u, v, 1])

Pixel coordinates refer to pixel centres; integer ``(u, v)`` is the centre
of column ``u`` and row ``v``.  All angles are radians, depths are metres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_array, check_rotation
from .exceptions import ConfigurationError, DomainError

#: Marker for pixels whose ray never meets the ground in front of the camera.
INVALID = math.nan


def is_invalid(value):
    return np.isnan(value)


@dataclass(frozen=True, eq=False)
class CameraModel:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]
    _k_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = check_array(self.intrinsics, shape=(3, 3), name="intrinsics")
        R = check_rotation(self.rotation)
        T = check_array(self.translation, shape=(3,), name="translation")
        width, height = (int(s) for s in self.image_size)
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
        if fx <= 0 or fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= cx < width and 0 <= cy < height):
            raise ConfigurationError("principal point must lie inside the image")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ConfigurationError("intrinsic matrix is not invertible")
        for name, value in (("intrinsics", K), ("rotation", R), ("translation", T)):
            value = value.copy()
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "image_size", (width, height))
        k_inv = np.linalg.inv(K)
        k_inv.setflags(write=False)
        object.__setattr__(self, "_k_inv", k_inv)

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def altitude(self) -> float:
        """Height of the camera origin above the ground plane."""
        return float(self.translation[2])

    @property
    def origin(self) -> np.ndarray:
        return self.translation

    @classmethod
    def from_pose(cls, position, yaw, pitch, image_size=(480, 224), hfov=math.pi / 2):
        """Build a camera at ``position`` looking along heading ``yaw``.

        ``pitch`` is the depression of the optical axis below the horizon
        (``pi/2`` is nadir).  ``hfov`` is the horizontal field of view.
        """
        width, height = image_size
        f = (width / 2.0) / math.tan(hfov / 2.0)
        K = np.array([[f, 0.0, (width - 1) / 2.0],
                      [0.0, f, (height - 1) / 2.0],
                      [0.0, 0.0, 1.0]])
        forward = np.array([math.cos(pitch) * math.cos(yaw),
                            math.cos(pitch) * math.sin(yaw),
                            -math.sin(pitch)])
        right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
        down = np.cross(forward, right)
        R = np.column_stack([right, down, forward])
        return cls(K, R, np.asarray(position, dtype=float), (width, height))

    @classmethod
    def looking_at(cls, position, target, image_size=(480, 224), hfov=math.pi / 2):
        position = np.asarray(position, dtype=float)
        delta = np.asarray(target, dtype=float) - position
        yaw = math.atan2(delta[1], delta[0])
        pitch = math.atan2(-delta[2], math.hypot(delta[0], delta[1]))
        return cls.from_pose(position, yaw, pitch, image_size, hfov)

    def to_dict(self):
        return {
            "intrinsics": self.intrinsics.tolist(),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["intrinsics"], dtype=float),
                   np.array(data["rotation"], dtype=float),
                   np.array(data["translation"], dtype=float),
                   tuple(data["image_size"]))


@dataclass(frozen=True, eq=False)
class GroundPriorMaps:
    """Per-pixel depth upper bound, viewing angle and validity (rows = v)."""
    depth_upper_bound: np.ndarray
    viewing_angle: np.ndarray
    validity: np.ndarray


def _check_pixel(camera, u, v):
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise DomainError(f"pixel ({u}, {v}) outside image {camera.image_size}")


def pixel_rays(camera: CameraModel, u, v):
    """Unit world-frame ray directions for arrays of pixel coordinates."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    homog = np.stack([u, v, np.ones_like(u)], axis=-1)
    d = homog @ (camera.rotation @ camera._k_inv).T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_ray(camera: CameraModel, u, v):
    """Return ``(origin, direction)`` of the ray through pixel ``(u, v)``."""
    _check_pixel(camera, u, v)
    return camera.origin.copy(), pixel_rays(camera, u, v)


def project_world_to_pixel(camera: CameraModel, points):
    """Project world points to pixel coordinates; returns ``(uv, depth_z)``.

    ``depth_z`` is the camera-frame z coordinate; points behind the camera
    have ``depth_z <= 0`` and meaningless ``uv``.
    """
    points = np.asarray(points, dtype=float)
    cam = (points - camera.origin) @ camera.rotation
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pix = cam @ camera.intrinsics.T
        uv = pix[..., :2] / pix[..., 2:3]
    return uv, z


def _ground_depth(camera, directions):
    if camera.altitude <= 0:
        raise ConfigurationError(f"altitude must be > 0, got {camera.altitude}")
    dz = directions[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(dz < 0, -camera.altitude / dz, np.nan)
    return depth


def depth_upper_bound(camera: CameraModel, u, v) -> float:
    """Distance along the pixel ray to the ground plane, or ``INVALID``."""
    _check_pixel(camera, u, v)
    return float(_ground_depth(camera, pixel_rays(camera, u, v)))


def viewing_angle(camera: CameraModel, u, v) -> float:
    """Elevation of the pixel ray below the horizon, ``arcsin(H / D_ub)``."""
    d = depth_upper_bound(camera, u, v)
    if is_invalid(d):
        return INVALID
    return float(np.arcsin(min(1.0, camera.altitude / d)))


def ground_prior_maps(camera: CameraModel) -> GroundPriorMaps:
    v, u = np.mgrid[0:camera.height, 0:camera.width]
    depth = _ground_depth(camera, pixel_rays(camera, u, v))
    valid = ~np.isnan(depth)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(valid, np.arcsin(np.minimum(1.0, camera.altitude / depth)), np.nan)
    return GroundPriorMaps(depth, theta, valid)


def depth_from_height(d_upper, altitude, h):
    """Depth of a point at height ``h`` on a ray whose ground depth is ``d_upper``."""
    h_arr = np.asarray(h, dtype=float)
    if altitude <= 0:
        raise ConfigurationError(f"altitude must be > 0, got {altitude}")
    if np.any(h_arr < 0) or np.any(h_arr > altitude):
        raise DomainError(f"height must lie in [0, {altitude}]")
    out = np.asarray(d_upper, dtype=float) * (1.0 - h_arr / altitude)
    return float(out) if out.ndim == 0 else out


def range_ratio(altitude_multiple_k, theta_pixel, theta_lower_bound) -> float:
    """Ratio of the drone-distance depth range to the near-ground range.

    With ``H = k * h_max`` this is
    ``(k / sin(theta) - k + 1) / (1 / sin(theta_lb) - 1)``.
    """
    k = float(altitude_multiple_k)
    if k < 1:
        raise DomainError(f"altitude multiple must be >= 1, got {k}")
    if not 0 < theta_lower_bound <= theta_pixel <= math.pi / 2:
        raise DomainError("require 0 < theta_lower_bound <= theta_pixel <= pi/2")
    denom = 1.0 / math.sin(theta_lower_bound) - 1.0
    numer = k / math.sin(theta_pixel) - k + 1.0
    if denom <= 0.0:
        return math.inf
    return numer / denom


def depth_sensitivity(h, theta, delta):
    """First-order depth change ``h cos(theta) / sin(theta)^2 * delta``."""
    h = np.asarray(h, dtype=float)
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(h <= 0) or np.any(delta <= 0):
        raise DomainError("h and delta must be positive")
    if np.any(theta - delta <= 0) or np.any(theta > math.pi / 2):
        raise DomainError("require 0 < theta - delta < theta <= pi/2")
    out = h * np.cos(theta) / np.sin(theta) ** 2 * delta
    return float(out) if out.ndim == 0 else out
