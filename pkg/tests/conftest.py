from pathlib import Path

import numpy as np
import pytest

from occugrid.geometry import Calibration, FrustumGridSpec, VoxelGridSpec, parse_kitti_calib

DATA = Path(__file__).parent / "data"


@pytest.fixture
def kitti_calib_text():
    return (DATA / "kitti_000000_calib.txt").read_text()


@pytest.fixture
def kitti_calib(kitti_calib_text):
    return parse_kitti_calib(kitti_calib_text)


@pytest.fixture
def kitti_voxel_spec():
    return VoxelGridSpec.from_range((2.0, -30.08, -3.0), (46.8, 30.08, 1.0), (0.16, 0.16, 0.16))


@pytest.fixture
def unit_grid64():
    return VoxelGridSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (64, 64, 64))


def identity_calib(f=100.0, cu=50.0, cv=40.0):
    p = np.array([[f, 0, cu, 0], [0, f, cv, 0], [0, 0, 1, 0]], dtype=float)
    return Calibration(p)


def random_rigid(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    t = np.eye(4)
    t[:3, :3] = q
    t[:3, 3] = rng.normal(scale=5.0, size=3)
    return t


def tiny_frustum(disc="LID", width=2, height=2, bins=4):
    return FrustumGridSpec(width=width, height=height, depth_bins=bins, downsample=1,
                           depth_min=2.0, depth_max=10.0, discretization=disc)
