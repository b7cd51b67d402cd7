"""Frustum-to-voxel grid sampling.

Each voxel center is projected into the frustum grid and the frustum field is
read there with trilinear interpolation over (column, row, bin). Column and
row coordinates are image pixels divided by the stride; the bin coordinate is
continuous with integer ``b`` at the center of depth bin ``b``. Coordinates
past the last sample clamp to the edge; voxels that project behind the camera,
off the image or outside the depth range receive 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import (Calibration, FrustumGridSpec, VoxelGridSpec, continuous_bin,
                       lidar_to_camera, project_to_image)


class FrustumCoords(NamedTuple):
    coords: np.ndarray  # (X, Y, Z, 3): column, row, bin
    valid: np.ndarray  # (X, Y, Z) bool


@dataclass(frozen=True, eq=False)
class FrustumField:
    """(H_F, W_F, D) or (H_F, W_F, D, C) values over a frustum grid."""

    values: np.ndarray
    spec: FrustumGridSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape[:3] != self.spec.shape or v.ndim not in (3, 4):
            raise ValueError(f"field shape {v.shape} does not match frustum grid {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("frustum field values must be finite")
        object.__setattr__(self, "values", v)


def voxel_to_frustum_coords(calib: Calibration, fspec: FrustumGridSpec,
                            vspec: VoxelGridSpec) -> FrustumCoords:
    centers = vspec.voxel_centers().reshape(-1, 3)
    cam = lidar_to_camera(calib, centers)
    proj = project_to_image(calib, cam, fspec.image_size)
    depth = proj.uvd[:, 2]
    valid = proj.valid & (depth >= fspec.depth_min) & (depth < fspec.depth_max)
    s = fspec.downsample
    coords = np.stack([proj.uvd[:, 0] / s, proj.uvd[:, 1] / s, continuous_bin(fspec, depth)], axis=1)
    coords[~valid] = 0.0
    return FrustumCoords(coords.reshape(vspec.dims + (3,)), valid.reshape(vspec.dims))


def _axis_weights(x: np.ndarray, n: int):
    x = np.clip(x, 0.0, n - 1)
    i0 = np.minimum(np.floor(x).astype(np.int64), max(n - 2, 0))
    frac = x - i0
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, frac


def sample_frustum_to_voxel(field, coords, valid=None) -> np.ndarray:
    """Trilinearly sample ``field`` at ``coords`` (..., 3) = (column, row, bin).

    ``field`` is a FrustumField or an array shaped (rows, columns, bins[, C]).
    ``coords`` may be a FrustumCoords, in which case ``valid`` comes with it.
    Returns ``coords.shape[:-1]`` (+ ``(C,)``) values, exactly 0 where invalid.
    """
    values = field.values if isinstance(field, FrustumField) else np.asarray(field, dtype=np.float64)
    if isinstance(coords, FrustumCoords):
        coords, valid = coords
    coords = np.asarray(coords, dtype=np.float64)
    if values.ndim not in (3, 4):
        raise ValueError(f"field must be 3-D or 4-D, got shape {values.shape}")
    if coords.shape[-1] != 3:
        raise ValueError(f"coords must end in a length-3 axis, got shape {coords.shape}")
    if valid is None:
        valid = np.ones(coords.shape[:-1], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != coords.shape[:-1]:
        raise ValueError(f"valid mask shape {valid.shape} does not match coords {coords.shape[:-1]}")

    rows, cols, bins = values.shape[:3]
    flat = coords.reshape(-1, 3)
    ok = valid.reshape(-1) & np.all(np.isfinite(flat), axis=1)
    flat = np.where(ok[:, None], flat, 0.0)
    c0, c1, fc = _axis_weights(flat[:, 0], cols)
    r0, r1, fr = _axis_weights(flat[:, 1], rows)
    b0, b1, fb = _axis_weights(flat[:, 2], bins)

    out = np.zeros((flat.shape[0],) + values.shape[3:])
    for r, wr in ((r0, 1.0 - fr), (r1, fr)):
        for c, wc in ((c0, 1.0 - fc), (c1, fc)):
            for b, wb in ((b0, 1.0 - fb), (b1, fb)):
                w = wr * wc * wb
                if values.ndim == 4:
                    w = w[:, None]
                out += w * values[r, c, b]
    out[~ok] = 0.0
    return out.reshape(coords.shape[:-1] + values.shape[3:])
