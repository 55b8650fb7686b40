"""Voxel-grid metadata shared by scalar volumes and binary masks.

A grid is fully described by its dimensions, voxel sizes, and a 4x4
voxel-index-to-world-millimetre affine. All masks that enter a metric
together must live on the same grid; nothing in this toolkit resamples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AffineMismatch, GridMismatch

# Per-element tolerance when comparing affines of co-registered volumes.
# Upstream registration is expected to have produced identical grids, so a
# larger disagreement is an input error, not an input to fix up by resampling.
AFFINE_ATOL_MM = 1e-3

_VOXEL_SIZE_ATOL = 1e-6


@dataclass(frozen=True, eq=False)
class VolumeHeader:
    """Spatial metadata of one volume.

    dims            number of voxels along x, y, z
    voxel_size      millimetres per voxel along each axis
    affine          4x4 voxel-index -> world-mm matrix, bottom row (0,0,0,1)
    datatype_code   NIfTI datatype code of the on-disk representation
    scale_slope     on-disk value scaling (0 is treated as 1 on read)
    scale_intercept on-disk value offset
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    affine: np.ndarray
    datatype_code: int = 2
    scale_slope: float = 1.0
    scale_intercept: float = 0.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vox = tuple(float(v) for v in self.voxel_size)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(vox) != 3 or any(not np.isfinite(v) or v <= 0 for v in vox):
            raise ValueError(f"voxel sizes must be positive reals, got {self.voxel_size}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got shape {affine.shape}")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("affine bottom row must be exactly (0, 0, 0, 1)")
        if np.linalg.det(affine[:3, :3]) == 0.0:
            raise ValueError("upper-left 3x3 of affine is singular")
        affine = affine.copy()
        affine.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vox)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "datatype_code", int(self.datatype_code))
        object.__setattr__(self, "scale_slope", float(self.scale_slope))
        object.__setattr__(self, "scale_intercept", float(self.scale_intercept))

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_volume_ml(self) -> float:
        """Volume of one voxel in millilitres (mm^3 / 1000)."""
        vx, vy, vz = self.voxel_size
        return vx * vy * vz / 1000.0

    def with_datatype(self, code: int) -> "VolumeHeader":
        return VolumeHeader(self.dims, self.voxel_size, self.affine, code,
                            self.scale_slope, self.scale_intercept)

    def world_coordinates(self, ijk) -> np.ndarray:
        """Map voxel indices (..., 3) to world millimetres through the affine."""
        ijk = np.asarray(ijk, dtype=np.float64)
        return ijk @ self.affine[:3, :3].T + self.affine[:3, 3]

    def world_x_bounds(self) -> tuple[float, float]:
        """World-x extent of the voxel-centre grid (over the 8 index corners)."""
        nx, ny, nz = self.dims
        corners = np.array([(i, j, k)
                            for i in (0, nx - 1)
                            for j in (0, ny - 1)
                            for k in (0, nz - 1)], dtype=np.float64)
        xs = self.world_coordinates(corners)[:, 0]
        return float(xs.min()), float(xs.max())

    def world_x_grid(self) -> np.ndarray:
        """World-x coordinate of every voxel centre, shape dims."""
        nx, ny, nz = self.dims
        row = self.affine[0]
        return (row[0] * np.arange(nx)[:, None, None]
                + row[1] * np.arange(ny)[None, :, None]
                + row[2] * np.arange(nz)[None, None, :]
                + row[3])


def check_same_grid(a: VolumeHeader, b: VolumeHeader,
                    affine_atol: float = AFFINE_ATOL_MM) -> None:
    """Raise unless two headers describe the same co-registered grid."""
    if a.dims != b.dims:
        raise GridMismatch(f"volume dimensions differ: {a.dims} vs {b.dims}")
    if any(abs(x - y) > _VOXEL_SIZE_ATOL for x, y in zip(a.voxel_size, b.voxel_size)):
        raise GridMismatch(f"voxel sizes differ: {a.voxel_size} vs {b.voxel_size}")
    if np.max(np.abs(a.affine - b.affine)) > affine_atol:
        raise AffineMismatch(
            f"affines differ by more than {affine_atol} mm per element")


def diagonal_affine(voxel_size) -> np.ndarray:
    """Affine for an axis-aligned grid with the origin at voxel (0,0,0)."""
    vx, vy, vz = voxel_size
    return np.diag([float(vx), float(vy), float(vz), 1.0])
