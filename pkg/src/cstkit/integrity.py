"""Tract-level integrity measures on co-registered binary masks.

Three measures are computed between a bilateral tract mask and a haematoma
mask:

* Dice similarity between two masks (segmentation agreement).
* Haematoma overlap: true if the tract and haematoma masks share any voxel.
* Tract split: per side of the tract, true if some axial (constant-z) slice
  strictly inside that side's occupied z-extent contains no tract voxel,
  or if the side is absent altogether.

Sidedness is defined geometrically: a voxel belongs to the left side when
its world-x coordinate (through the affine) is at or below a midsagittal
plane, and to the right side otherwise. The plane defaults to the midpoint
of the volume's world-x extent and can be overridden per subject, e.g. for
severe midline shift.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputWarning
from .grid import check_same_grid
from .mask_core import MaskVolume, intersect, volume_ml, voxel_count


@dataclass(frozen=True)
class SideMasks:
    """A tract mask partitioned about a midsagittal plane.

    Voxels with world x exactly on the plane are assigned to the left side,
    so left and right are disjoint and together cover the input mask.
    """

    left: MaskVolume
    right: MaskVolume
    midline_world_x: float


@dataclass(frozen=True)
class SideSplit:
    """Split assessment of one side of the tract."""

    split: bool
    gap_slices: tuple[int, ...]
    missing: bool


@dataclass(frozen=True)
class IntegrityResult:
    """Joint integrity record for one subject."""

    overlap: bool
    overlap_voxels: int
    split: bool
    split_left: bool
    split_right: bool
    gap_slices_left: tuple[int, ...]
    gap_slices_right: tuple[int, ...]
    missing_left: bool
    missing_right: bool
    cst_volume_ml: float
    haematoma_volume_ml: float

    def __post_init__(self):
        if self.overlap != (self.overlap_voxels > 0):
            raise ValueError("overlap flag inconsistent with overlap_voxels")
        if self.split != (self.split_left or self.split_right):
            raise ValueError("split flag inconsistent with per-side flags")


def dice(a: MaskVolume, b: MaskVolume) -> float:
    """Dice similarity coefficient 2|A∩B| / (|A|+|B|) in [0, 1].

    Two empty masks agree perfectly about nothing; 1.0 is returned with a
    degenerate-input warning so cohort batch runs survive empty predictions.
    """
    check_same_grid(a.header, b.header)
    na = voxel_count(a)
    nb = voxel_count(b)
    if na + nb == 0:
        warnings.warn("Dice of two empty masks; returning 1.0 by convention",
                      DegenerateInputWarning, stacklevel=2)
        return 1.0
    shared = int((a.bits & b.bits).sum())
    return 2.0 * shared / (na + nb)


def haematoma_overlap(cst: MaskVolume, haematoma: MaskVolume) -> tuple[bool, int]:
    """Whether the tract and haematoma share any voxel, plus the shared count."""
    shared = voxel_count(intersect(cst, haematoma))
    return shared > 0, shared


def default_midline_x(mask: MaskVolume) -> float:
    """Midpoint of the volume's world-x extent."""
    lo, hi = mask.header.world_x_bounds()
    return 0.5 * (lo + hi)


def split_by_laterality(cst: MaskVolume,
                        midline_world_x: float | None = None) -> SideMasks:
    """Partition a tract mask into left/right about a midsagittal plane."""
    cst.require_nonempty("tract mask")
    if midline_world_x is None:
        midline_world_x = default_midline_x(cst)
    midline_world_x = float(midline_world_x)
    world_x = cst.header.world_x_grid()
    left_bits = cst.bits & (world_x <= midline_world_x)
    right_bits = cst.bits & (world_x > midline_world_x)
    return SideMasks(
        left=MaskVolume(cst.header, left_bits),
        right=MaskVolume(cst.header, right_bits),
        midline_world_x=midline_world_x,
    )


def _side_split(bits: np.ndarray) -> SideSplit:
    occupied = bits.any(axis=(0, 1))
    filled = np.flatnonzero(occupied)
    if filled.size == 0:
        # A side that is absent everywhere counts as interrupted.
        return SideSplit(split=True, gap_slices=(), missing=True)
    zmin, zmax = int(filled[0]), int(filled[-1])
    gaps = tuple(int(z) for z in range(zmin + 1, zmax) if not occupied[z])
    return SideSplit(split=bool(gaps), gap_slices=gaps, missing=False)


def detect_split(cst: MaskVolume,
                 midline_world_x: float | None = None) -> tuple[SideSplit, SideSplit, float]:
    """Assess each side of the tract for axial interruptions.

    A side is split iff some slice strictly between its lowest and highest
    occupied z index holds no voxel of that side, or the side is entirely
    missing. Slices above and below the side's own extent do not count, so
    differing fields of view do not flag every scan.

    Returns (left, right, midline_world_x).
    """
    sides = split_by_laterality(cst, midline_world_x)
    return (_side_split(sides.left.bits),
            _side_split(sides.right.bits),
            sides.midline_world_x)


def assess_integrity(cst: MaskVolume, haematoma: MaskVolume,
                     midline_world_x: float | None = None) -> IntegrityResult:
    """Combine overlap, split detection and volumes into one record."""
    check_same_grid(cst.header, haematoma.header)
    cst.require_nonempty("tract mask")
    overlap, shared = haematoma_overlap(cst, haematoma)
    left, right, _ = detect_split(cst, midline_world_x)
    return IntegrityResult(
        overlap=overlap,
        overlap_voxels=shared,
        split=left.split or right.split,
        split_left=left.split,
        split_right=right.split,
        gap_slices_left=left.gap_slices,
        gap_slices_right=right.gap_slices,
        missing_left=left.missing,
        missing_right=right.missing,
        cst_volume_ml=volume_ml(cst),
        haematoma_volume_ml=volume_ml(haematoma),
    )
