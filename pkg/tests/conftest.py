import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from skyfleet.camera import CameraModel


def random_camera(rng, tilted=True):
    """Camera with a random pose; ``tilted`` uses an arbitrary rotation."""
    width = int(rng.integers(16, 640))
    height = int(rng.integers(16, 480))
    f = rng.uniform(0.3, 2.0) * width
    K = np.array([[f, 0.0, rng.uniform(0, width - 1)],
                  [0.0, f * rng.uniform(0.8, 1.2), rng.uniform(0, height - 1)],
                  [0.0, 0.0, 1.0]])
    pos = np.array([rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(5, 150)])
    if tilted:
        R = Rotation.random(random_state=rng).as_matrix()
    else:
        yaw = rng.uniform(-math.pi, math.pi)
        pitch = rng.uniform(0.2, math.pi / 2)
        return CameraModel.from_pose(pos, yaw, pitch, (width, height), rng.uniform(0.5, 2.0))
    return CameraModel(K, R, pos, (width, height))


def nadir_camera(altitude=50.0, size=(101, 81), hfov=math.pi / 2, xy=(0.0, 0.0)):
    return CameraModel.from_pose((xy[0], xy[1], altitude), 0.0, math.pi / 2, size, hfov)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
