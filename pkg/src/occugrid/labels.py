"""Tri-state occupancy label grids shared by the frustum and voxel generators."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

UNKNOWN = -1
FREE = 0
OCCUPIED = 1


class Space(enum.IntEnum):
    FRUSTUM = 0
    VOXEL = 1


@dataclass(frozen=True, eq=False)
class OccupancyLabelGrid:
    """Labels in {-1 unknown, 0 free, 1 occupied}.

    ``values`` is (rows, columns, bins) for FRUSTUM grids and (X, Y, Z) for
    VOXEL grids. ``origin``/``cell_size`` carry the geometry written into OCC3
    headers: for VOXEL the grid origin and voxel size in meters, for FRUSTUM
    zeros and ``(stride, 0, 0)``.
    """

    values: np.ndarray
    space: Space
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cell_size: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 3:
            raise ValueError(f"label grid must be 3-D, got shape {vals.shape}")
        if vals.dtype != np.int8:
            if vals.size and (vals.min() < -1 or vals.max() > 1):
                raise ValueError("labels must be in {-1, 0, 1}")
            vals = vals.astype(np.int8)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "space", Space(self.space))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "cell_size", tuple(float(v) for v in self.cell_size))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def counts(self) -> dict[str, int]:
        v = self.values
        return {
            "occupied": int(np.count_nonzero(v == OCCUPIED)),
            "free": int(np.count_nonzero(v == FREE)),
            "unknown": int(np.count_nonzero(v == UNKNOWN)),
        }

    def known_mask(self) -> np.ndarray:
        return self.values > UNKNOWN

    def stats_text(self) -> str:
        """Line-oriented ``key=value`` summary with counts and fractions per status."""
        c = self.counts()
        total = self.values.size
        lines = [f"space={self.space.name}", f"total={total}"]
        lines += [f"{k}={c[k]}" for k in ("occupied", "free", "unknown")]
        for k in ("occupied", "free", "unknown"):
            frac = c[k] / total if total else 0.0
            lines.append(f"{k}_fraction={frac:.6f}")
        return "\n".join(lines) + "\n"

    def equals(self, other: "OccupancyLabelGrid") -> bool:
        return (self.space == other.space and self.shape == other.shape
                and np.array_equal(self.values, other.values)
                and self.origin == other.origin and self.cell_size == other.cell_size)
