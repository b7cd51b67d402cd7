"""Readers and writers: KITTI velodyne clouds, OCC3 label containers, ASCII PLY.

OCC3 layout (little-endian, 67-byte header, no padding)::

    offset  size  field
    0       4     magic b"OCC3"
    4       2     version (uint16, = 1)
    6       1     space tag (0 = FRUSTUM, 1 = VOXEL)
    7       12    dims, 3 x uint32  (FRUSTUM: W_F, H_F, D; VOXEL: X, Y, Z)
    19      24    origin, 3 x float64 (meters; zeros for FRUSTUM)
    43      24    cell size, 3 x float64 (meters; FRUSTUM stores (stride, 0, 0))
    67      n     int8 labels, first axis slowest
                  (FRUSTUM: row, column, bin; VOXEL: x, y, z)
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError, UnsupportedSpaceError
from .geometry import PointCloud, VoxelGridSpec
from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid, Space

OCC3_MAGIC = b"OCC3"
OCC3_VERSION = 1
OCC3_HEADER = struct.Struct("<4sHB3I3d3d")

PLY_COLORS = {
    OCCUPIED: (255, 0, 0),
    FREE: (0, 255, 0),
    UNKNOWN: (128, 128, 128),
}
_PLY_FILTERS = {
    "occupied": (OCCUPIED,),
    "free": (FREE,),
    "unknown": (UNKNOWN,),
    "known": (FREE, OCCUPIED),
    "all": (UNKNOWN, FREE, OCCUPIED),
}

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class Occ3Header:
    space: Space
    dims: tuple[int, int, int]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cell_size: tuple[float, float, float] = (0.0, 0.0, 0.0)
    version: int = OCC3_VERSION

    @property
    def payload_length(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def array_shape(self) -> tuple[int, int, int]:
        if self.space is Space.FRUSTUM:
            w, h, d = self.dims
            return h, w, d
        return self.dims

    def encode(self) -> bytes:
        return OCC3_HEADER.pack(OCC3_MAGIC, self.version, int(self.space), *self.dims,
                                *self.origin, *self.cell_size)

    @classmethod
    def decode(cls, data: bytes) -> "Occ3Header":
        if len(data) < OCC3_HEADER.size:
            raise FormatError(f"OCC3 header truncated: need {OCC3_HEADER.size} bytes, got {len(data)}")
        magic, version, tag, *rest = OCC3_HEADER.unpack_from(data)
        if magic != OCC3_MAGIC:
            raise FormatError(f"bad OCC3 magic {magic!r}")
        if version != OCC3_VERSION:
            raise FormatError(f"unsupported OCC3 version {version}")
        if tag not in (0, 1):
            raise FormatError(f"bad OCC3 space tag {tag}")
        dims = tuple(rest[:3])
        if min(dims) < 1:
            raise FormatError(f"OCC3 dims must be positive, got {dims}")
        return cls(Space(tag), dims, tuple(rest[3:6]), tuple(rest[6:9]), version)


def read_lidar_bin(data: bytes) -> PointCloud:
    """Decode a KITTI velodyne scan: little-endian float32 (x, y, z, intensity) records."""
    if len(data) % 16:
        raise FormatError(f"velodyne data length {len(data)} is not a multiple of 16")
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    bad = ~np.all(np.isfinite(raw), axis=1)
    if np.any(bad):
        raise FormatError(f"non-finite value at point {int(np.argmax(bad))}")
    return PointCloud(raw[:, :3].astype(np.float64), raw[:, 3].astype(np.float64))


def write_lidar_bin(cloud: PointCloud) -> bytes:
    inten = cloud.intensity if cloud.intensity is not None else np.zeros(len(cloud))
    rec = np.column_stack([cloud.points, inten]).astype("<f4")
    return rec.tobytes()


def occ3_header_for(grid: OccupancyLabelGrid) -> Occ3Header:
    if grid.space is Space.FRUSTUM:
        h, w, d = grid.shape
        dims = (w, h, d)
    else:
        dims = grid.shape
    return Occ3Header(grid.space, tuple(int(v) for v in dims), grid.origin, grid.cell_size)


def write_occ3(grid: OccupancyLabelGrid) -> bytes:
    header = occ3_header_for(grid)
    return header.encode() + np.ascontiguousarray(grid.values, dtype=np.int8).tobytes()


def read_occ3(data: bytes) -> OccupancyLabelGrid:
    header = Occ3Header.decode(data)
    payload = data[OCC3_HEADER.size:]
    if len(payload) != header.payload_length:
        raise FormatError(f"OCC3 payload length mismatch: expected {header.payload_length} bytes, "
                          f"got {len(payload)}")
    values = np.frombuffer(payload, dtype=np.int8).reshape(header.array_shape).copy()
    if values.size and (values.min() < UNKNOWN or values.max() > OCCUPIED):
        raise FormatError("OCC3 payload contains labels outside {-1, 0, 1}")
    return OccupancyLabelGrid(values, header.space, header.origin, header.cell_size)


def atomic_write(path: PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temporary file in the same directory and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600; give the result ordinary umask-governed permissions
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_ply(grid: OccupancyLabelGrid, spec: VoxelGridSpec, which: str = "occupied") -> str:
    """ASCII PLY of voxel centers with the selected status.

    ``which`` is one of occupied, free, unknown, known, all. Vertices are
    colored occupied red (255, 0, 0), free green (0, 255, 0), unknown gray
    (128, 128, 128).
    """
    if grid.space is not Space.VOXEL:
        raise UnsupportedSpaceError("PLY export needs a VOXEL grid")
    if which not in _PLY_FILTERS:
        raise ValueError(f"unknown status filter {which!r}; expected one of {sorted(_PLY_FILTERS)}")
    if grid.shape != spec.dims:
        raise ValueError(f"grid shape {grid.shape} does not match voxel spec dims {spec.dims}")

    keep = np.isin(grid.values, _PLY_FILTERS[which])
    idx = np.argwhere(keep)
    centers = spec.voxel_centers(idx) if len(idx) else np.zeros((0, 3))
    status = grid.values[keep]

    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"comment occugrid voxels status={which}\n")
    out.write(f"element vertex {len(idx)}\n")
    out.write("property double x\nproperty double y\nproperty double z\n")
    out.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
    out.write("end_header\n")
    for (x, y, z), s in zip(centers, status):
        r, g, b = PLY_COLORS[int(s)]
        out.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
    return out.getvalue()
