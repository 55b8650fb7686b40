"""Binary 3-D masks and elementary voxel-set operations.

Masks are immutable boolean grids indexed [x, y, z]. Linear voxel indices,
where needed (component tie-breaking), follow the on-disk x-fastest order:
index = x + nx * (y + ny * z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .grid import VolumeHeader, check_same_grid

DEFAULT_CONNECTIVITY = 26

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),   # faces only
    26: ndimage.generate_binary_structure(3, 3),  # faces + edges + corners
}


@dataclass(frozen=True, eq=False)
class MaskVolume:
    """Binary mask on a voxel grid."""

    header: VolumeHeader
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        if bits.shape != self.header.dims:
            raise ValueError(
                f"mask shape {bits.shape} != header dims {self.header.dims}")
        bits = bits.copy() if bits.flags.writeable else bits
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    def is_empty(self) -> bool:
        return not self.bits.any()

    def require_nonempty(self, what: str = "mask") -> None:
        if self.is_empty():
            raise EmptyMask(f"{what} has no voxels set")


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected-component labelling of a mask.

    labels holds 0 for background and 1..k for components; label 1 is the
    largest component, ties broken by the smaller first linear voxel index.
    component_sizes is ordered accordingly (descending).
    """

    labels: np.ndarray
    component_sizes: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.component_sizes)


def voxel_count(mask: MaskVolume) -> int:
    return int(mask.bits.sum())


def volume_ml(mask: MaskVolume) -> float:
    """Mask volume in millilitres."""
    return voxel_count(mask) * mask.header.voxel_volume_ml


def intersect(a: MaskVolume, b: MaskVolume) -> MaskVolume:
    """Voxelwise AND of two masks on the same grid; header taken from a."""
    check_same_grid(a.header, b.header)
    return MaskVolume(a.header, a.bits & b.bits)


def _validate_connectivity(connectivity: int):
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    return _STRUCTURES[connectivity]


def connected_components(mask: MaskVolume,
                         connectivity: int = DEFAULT_CONNECTIVITY) -> ComponentLabeling:
    """Label connected components deterministically.

    Components are renumbered by descending size; equal sizes are ordered by
    the first member voxel in x-fastest linear order, so the labelling does
    not depend on the underlying scan order of the labelling backend.
    """
    structure = _validate_connectivity(connectivity)
    raw, n = ndimage.label(mask.bits, structure=structure)
    if n == 0:
        return ComponentLabeling(np.zeros(mask.header.dims, dtype=np.int32), ())

    flat = raw.ravel(order="F")
    sizes = np.bincount(flat, minlength=n + 1)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size, dtype=np.int64))

    order = sorted(range(1, n + 1), key=lambda lab: (-int(sizes[lab]), int(first[lab])))
    lut = np.zeros(n + 1, dtype=np.int32)
    for new, old in enumerate(order, start=1):
        lut[old] = new
    return ComponentLabeling(lut[raw], tuple(int(sizes[lab]) for lab in order))


def filter_small_components(mask: MaskVolume, min_voxels: int,
                            connectivity: int = DEFAULT_CONNECTIVITY) -> MaskVolume:
    """Drop connected components smaller than min_voxels."""
    if min_voxels < 0:
        raise ValueError(f"min_voxels must be >= 0, got {min_voxels}")
    _validate_connectivity(connectivity)
    if min_voxels <= 1:
        return mask
    labeling = connected_components(mask, connectivity)
    if labeling.count == 0:
        return mask
    keep = np.zeros(labeling.count + 1, dtype=bool)
    for lab, size in enumerate(labeling.component_sizes, start=1):
        keep[lab] = size >= min_voxels
    return MaskVolume(mask.header, keep[labeling.labels])
