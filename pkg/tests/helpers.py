"""Independent oracles for the test suite.

Everything here is deliberately implemented by a different route than the
library: BFS instead of scipy labelling, struct packing instead of numpy
structured dtypes, longdouble normal equations instead of QR, and mpmath
quadrature instead of the continued fraction.
"""

from __future__ import annotations

import struct
from collections import deque

import numpy as np

from cstkit.grid import VolumeHeader, diagonal_affine
from cstkit.mask_core import MaskVolume
from cstkit.phantoms import PhantomSpec

_OFFSETS_6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
_OFFSETS_26 = [(dx, dy, dz)
               for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
               if (dx, dy, dz) != (0, 0, 0)]


def make_mask(bits, voxel_size=(1.0, 1.0, 1.0), affine=None) -> MaskVolume:
    bits = np.asarray(bits, dtype=bool)
    if affine is None:
        affine = diagonal_affine(voxel_size)
    header = VolumeHeader(bits.shape, voxel_size, affine)
    return MaskVolume(header, bits)


def bfs_components(bits: np.ndarray, connectivity: int) -> list[frozenset]:
    """Connected components as voxel-coordinate sets, via breadth-first search."""
    offsets = _OFFSETS_6 if connectivity == 6 else _OFFSETS_26
    nx, ny, nz = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    components = []
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not bits[x, y, z] or seen[x, y, z]:
                    continue
                queue = deque([(x, y, z)])
                seen[x, y, z] = True
                members = []
                while queue:
                    cx, cy, cz = queue.popleft()
                    members.append((cx, cy, cz))
                    for dx, dy, dz in offsets:
                        px, py, pz = cx + dx, cy + dy, cz + dz
                        if (0 <= px < nx and 0 <= py < ny and 0 <= pz < nz
                                and bits[px, py, pz] and not seen[px, py, pz]):
                            seen[px, py, pz] = True
                            queue.append((px, py, pz))
                components.append(frozenset(members))
    return components


def scan_split_oracle(side_bits: np.ndarray) -> tuple[bool, list[int], bool]:
    """Direct per-slice occupancy scan of one side: (split, gaps, missing)."""
    nz = side_bits.shape[2]
    occupied = []
    for z in range(nz):
        count = 0
        for x in range(side_bits.shape[0]):
            for y in range(side_bits.shape[1]):
                if side_bits[x, y, z]:
                    count += 1
        occupied.append(count > 0)
    filled = [z for z in range(nz) if occupied[z]]
    if not filled:
        return True, [], True
    gaps = [z for z in range(filled[0] + 1, filled[-1]) if not occupied[z]]
    return bool(gaps), gaps, False


_DT_PACK = {2: ("B", 8), 4: ("h", 16), 8: ("i", 32), 16: ("f", 32), 64: ("d", 64)}


def build_nifti_bytes(values: np.ndarray, voxel_size, affine, datatype_code: int,
                      byteorder: str = ">", scl_slope: float = 0.0,
                      scl_inter: float = 0.0) -> bytes:
    """Write a single-file NIfTI-1 blob with plain struct packing.

    Defaults to big-endian output, which the library never writes itself.
    """
    charcode, bitpix = _DT_PACK[datatype_code]
    nx, ny, nz = values.shape
    hdr = bytearray(348)
    struct.pack_into(byteorder + "i", hdr, 0, 348)
    struct.pack_into(byteorder + "8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(byteorder + "h", hdr, 70, datatype_code)
    struct.pack_into(byteorder + "h", hdr, 72, bitpix)
    struct.pack_into(byteorder + "8f", hdr, 76, 1.0, *voxel_size, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(byteorder + "f", hdr, 108, 352.0)
    struct.pack_into(byteorder + "f", hdr, 112, scl_slope)
    struct.pack_into(byteorder + "f", hdr, 116, scl_inter)
    struct.pack_into(byteorder + "h", hdr, 254, 1)  # sform_code
    affine = np.asarray(affine, dtype=np.float64)
    struct.pack_into(byteorder + "4f", hdr, 280, *affine[0])
    struct.pack_into(byteorder + "4f", hdr, 296, *affine[1])
    struct.pack_into(byteorder + "4f", hdr, 312, *affine[2])
    struct.pack_into("4s", hdr, 344, b"n+1\x00")

    flat = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                flat.append(values[x, y, z])
    if charcode in ("B", "h", "i"):
        flat = [int(v) for v in flat]
    data = struct.pack(f"{byteorder}{len(flat)}{charcode}", *flat)
    return bytes(hdr) + b"\x00\x00\x00\x00" + data


def normal_equations_ols(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients by explicit (X'X)^-1 X'y at 50 digits."""
    import mpmath as mp

    with mp.workdps(50):
        xm = mp.matrix([[mp.mpf(float(v)) for v in row] for row in np.asarray(x)])
        ym = mp.matrix([mp.mpf(float(v)) for v in np.asarray(y)])
        beta = mp.lu_solve(xm.T * xm, xm.T * ym)
        return np.array([float(b) for b in beta])


def t_cdf_quad(t: float, dof: int) -> float:
    """Student-t CDF by direct quadrature of the density at 50 digits."""
    import mpmath as mp

    with mp.workdps(50):
        nu = mp.mpf(dof)
        norm = mp.gamma((nu + 1) / 2) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / 2))

        def density(u):
            return norm * (1 + u * u / nu) ** (-(nu + 1) / 2)

        tt = mp.mpf(float(t))
        if tt == 0:
            return 0.5
        if tt > 0:
            return float(mp.mpf("0.5") + mp.quad(density, [0, tt]))
        return float(mp.mpf("0.5") - mp.quad(density, [tt, 0]))


def type7_median_iqr(values) -> tuple[float, float]:
    """Same quantile convention as the library, re-derived independently."""
    ordered = sorted(float(v) for v in values)
    n = len(ordered)

    def quantile(p: float) -> float:
        if n == 1:
            return ordered[0]
        h = (n - 1) * p
        lo = int(h)
        frac = h - lo
        if frac == 0.0:
            return ordered[lo]
        return ordered[lo] + frac * (ordered[lo + 1] - ordered[lo])

    return quantile(0.5), quantile(0.75) - quantile(0.25)


def random_phantom_spec(rng: np.random.Generator) -> PhantomSpec:
    """A random valid phantom covering no-gap, gapped and missing-side cases."""
    z0 = int(rng.integers(2, 5))
    z1 = int(rng.integers(13, 17))
    radius = float(rng.uniform(1.2, 2.2))

    def random_gaps() -> tuple[int, ...]:
        if rng.random() < 0.45:
            return ()
        count = int(rng.integers(1, 4))
        return tuple(sorted(rng.choice(np.arange(z0 + 1, z1), size=count,
                                       replace=False).tolist()))

    void_side = None
    roll = rng.random()
    if roll < 0.1:
        void_side = "left"
    elif roll < 0.2:
        void_side = "right"
    gaps_left = () if void_side == "left" else random_gaps()
    gaps_right = () if void_side == "right" else random_gaps()

    if rng.random() < 0.5:
        side_x = (6.5, 16.5)[int(rng.integers(0, 2))]
        center = (side_x + rng.uniform(-0.5, 0.5), 11.5 + rng.uniform(-0.5, 0.5),
                  9.5 + rng.uniform(-0.5, 0.5))
        radii = (3.0, 3.0, 3.0)
    else:
        center = (11.5 + rng.uniform(-0.2, 0.2), 11.5 + rng.uniform(-0.5, 0.5),
                  9.5 + rng.uniform(-0.5, 0.5))
        radii = (1.8, 1.8, 1.8)
    return PhantomSpec(
        tract_radius_vox=radius,
        tract_z_range=(z0, z1),
        gap_slices_left=gaps_left,
        gap_slices_right=gaps_right,
        void_side=void_side,
        haematoma_center=center,
        haematoma_radii=radii,
        jitter_vox=float(rng.uniform(0.0, 0.4)),
        seed=int(rng.integers(0, 2 ** 31)),
    )
