"""Synthetic bilateral-tract and haematoma volumes with known ground truth.

A phantom is two vertical tract columns of circular cross-section plus a
solid haematoma ellipsoid, on an axis-aligned grid. Ground-truth integrity
flags are derived from the generating geometry, never from the metric code,
so phantoms serve as an independent oracle for the metric implementations.

The seed perturbs only surface roughness of the columns. Roughness is
expand-only and never adds voxels inside the haematoma ellipsoid, so the
tract-haematoma intersection, and with it every truth flag, is a function
of the geometric spec alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .clinical_stats import MRS_MAX, NIHSS_MOTOR_MAX, OUTCOMES, SubjectRecord
from .errors import GeometryOutOfBounds
from .grid import VolumeHeader, diagonal_affine
from .integrity import IntegrityResult
from .mask_core import MaskVolume

_SIDES = ("left", "right")


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of one synthetic tract + haematoma pair.

    Offsets, centres and radii of the haematoma are in world millimetres;
    the tract radius and roughness amplitude are in voxel units. The z
    range is inclusive and gap slices must lie strictly inside it.
    """

    dims: tuple[int, int, int] = (24, 24, 20)
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tract_radius_vox: float = 1.6
    tract_x_offsets: tuple[float, float] = (6.5, 16.5)
    tract_z_range: tuple[int, int] = (3, 16)
    gap_slices_left: tuple[int, ...] = ()
    gap_slices_right: tuple[int, ...] = ()
    void_side: str | None = None
    haematoma_center: tuple[float, float, float] = (11.5, 11.5, 9.5)
    haematoma_radii: tuple[float, float, float] = (2.0, 2.0, 2.0)
    jitter_vox: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "tract_x_offsets",
                           tuple(float(v) for v in self.tract_x_offsets))
        object.__setattr__(self, "tract_z_range",
                           tuple(int(z) for z in self.tract_z_range))
        object.__setattr__(self, "gap_slices_left",
                           tuple(sorted(int(z) for z in self.gap_slices_left)))
        object.__setattr__(self, "gap_slices_right",
                           tuple(sorted(int(z) for z in self.gap_slices_right)))
        object.__setattr__(self, "haematoma_center",
                           tuple(float(v) for v in self.haematoma_center))
        object.__setattr__(self, "haematoma_radii",
                           tuple(float(v) for v in self.haematoma_radii))

    def gap_slices(self, side: str) -> tuple[int, ...]:
        return self.gap_slices_left if side == "left" else self.gap_slices_right


def _validate_spec(spec: PhantomSpec) -> float:
    """Check the geometry fits the grid; returns the default midline (mm)."""
    nx, ny, nz = spec.dims
    vx, vy, vz = spec.voxel_size
    if spec.tract_radius_vox <= 0:
        raise GeometryOutOfBounds("tract radius must be positive")
    if spec.jitter_vox < 0:
        raise GeometryOutOfBounds("roughness amplitude must be >= 0")
    if spec.void_side not in (None, "left", "right"):
        raise GeometryOutOfBounds(f"void_side must be left/right/None, "
                                  f"got {spec.void_side!r}")
    z0, z1 = spec.tract_z_range
    if not (0 <= z0 <= z1 < nz):
        raise GeometryOutOfBounds(f"tract z range {spec.tract_z_range} outside grid")
    for side in _SIDES:
        for z in spec.gap_slices(side):
            if not z0 < z < z1:
                raise GeometryOutOfBounds(
                    f"gap slice {z} not strictly inside z range ({z0}, {z1})")
        if spec.void_side == side and spec.gap_slices(side):
            raise GeometryOutOfBounds(f"gap slices given for voided {side} side")

    reach = spec.tract_radius_vox + spec.jitter_vox
    midline = 0.5 * (nx - 1) * vx
    left_x, right_x = spec.tract_x_offsets
    if not left_x < midline < right_x:
        raise GeometryOutOfBounds(
            f"column offsets {spec.tract_x_offsets} must straddle the "
            f"volume midline {midline}")
    if left_x + reach * vx > midline or right_x - reach * vx <= midline:
        raise GeometryOutOfBounds("columns reach across the midline")
    cy = 0.5 * (ny - 1)
    for offset in spec.tract_x_offsets:
        ax = offset / vx
        if ax - reach < 0 or ax + reach > nx - 1 or cy - reach < 0 or cy + reach > ny - 1:
            raise GeometryOutOfBounds("column cross-section exceeds the grid")

    bounds = ((nx - 1) * vx, (ny - 1) * vy, (nz - 1) * vz)
    for c, r, hi in zip(spec.haematoma_center, spec.haematoma_radii, bounds):
        if r <= 0:
            raise GeometryOutOfBounds("haematoma radii must be positive")
        if c - r < 0 or c + r > hi:
            raise GeometryOutOfBounds("haematoma ellipsoid exceeds the grid")
    return midline


def _header(spec: PhantomSpec) -> VolumeHeader:
    return VolumeHeader(dims=spec.dims, voxel_size=spec.voxel_size,
                        affine=diagonal_affine(spec.voxel_size), datatype_code=2)


def generate_phantom(spec: PhantomSpec) -> tuple[MaskVolume, MaskVolume, IntegrityResult]:
    """Build the tract and haematoma masks plus the geometric truth record."""
    _validate_spec(spec)
    nx, ny, nz = spec.dims
    vx, vy, vz = spec.voxel_size
    z0, z1 = spec.tract_z_range
    header = _header(spec)
    rng = np.random.default_rng(spec.seed)

    # Haematoma: solid ellipsoid over voxel centres, in world mm.
    cx, cy_mm, cz = spec.haematoma_center
    rx, ry, rz = spec.haematoma_radii
    wx = (np.arange(nx) * vx)[:, None, None]
    wy = (np.arange(ny) * vy)[None, :, None]
    wz = (np.arange(nz) * vz)[None, None, :]
    haematoma = (((wx - cx) / rx) ** 2 + ((wy - cy_mm) / ry) ** 2
                 + ((wz - cz) / rz) ** 2) <= 1.0

    z_in_range = np.zeros(nz, dtype=bool)
    z_in_range[z0:z1 + 1] = True

    cy_vox = 0.5 * (ny - 1)
    dist2 = {}
    for side, offset in zip(_SIDES, spec.tract_x_offsets):
        ax = offset / vx
        dist2[side] = ((np.arange(nx)[:, None] - ax) ** 2
                       + (np.arange(ny)[None, :] - cy_vox) ** 2)

    cst = np.zeros(spec.dims, dtype=bool)
    core_union = np.zeros(spec.dims, dtype=bool)
    for side in _SIDES:
        keep_z = z_in_range.copy()
        for z in spec.gap_slices(side):
            keep_z[z] = False
        if spec.void_side == side:
            keep_z[:] = False
        radius_z = spec.tract_radius_vox + rng.uniform(0.0, spec.jitter_vox, size=nz)
        core = (dist2[side][:, :, None] <= spec.tract_radius_vox ** 2) & keep_z
        rough = (dist2[side][:, :, None] <= (radius_z ** 2)[None, None, :]) & keep_z
        # Expand-only roughness, censored inside the haematoma: the final
        # tract-haematoma intersection equals the core one for every seed.
        side_bits = core | (rough & ~haematoma)
        if spec.void_side != side:
            occupied = side_bits.any(axis=(0, 1))
            if not occupied[keep_z].all():
                raise GeometryOutOfBounds(
                    f"tract radius {spec.tract_radius_vox} too small to occupy "
                    f"every slice of the {side} column")
        cst |= side_bits
        core_union |= core

    overlap_voxels = int((core_union & haematoma).sum())
    split_left = bool(spec.gap_slices_left) or spec.void_side == "left"
    split_right = bool(spec.gap_slices_right) or spec.void_side == "right"
    voxel_ml = header.voxel_volume_ml
    truth = IntegrityResult(
        overlap=overlap_voxels > 0,
        overlap_voxels=overlap_voxels,
        split=split_left or split_right,
        split_left=split_left,
        split_right=split_right,
        gap_slices_left=spec.gap_slices_left if spec.void_side != "left" else (),
        gap_slices_right=spec.gap_slices_right if spec.void_side != "right" else (),
        missing_left=spec.void_side == "left",
        missing_right=spec.void_side == "right",
        cst_volume_ml=float(cst.sum()) * voxel_ml,
        haematoma_volume_ml=float(haematoma.sum()) * voxel_ml,
    )
    return MaskVolume(header, cst), MaskVolume(header, haematoma), truth


def phantom_for_flags(overlap: bool, split: bool,
                      rng: np.random.Generator) -> PhantomSpec:
    """A randomized phantom realizing the requested integrity flags.

    Placement jitter keeps clear margins, so the flags hold by construction:
    the haematoma is centred on a column axis (overlap) or between the
    columns with clearance (no overlap), and a split punches one or two
    interior slices on one side.
    """
    gaps_left: tuple[int, ...] = ()
    gaps_right: tuple[int, ...] = ()
    if split:
        z0, z1 = PhantomSpec.tract_z_range
        count = int(rng.integers(1, 3))
        slices = tuple(sorted(rng.choice(np.arange(z0 + 1, z1), size=count,
                                         replace=False).tolist()))
        if rng.random() < 0.5:
            gaps_left = slices
        else:
            gaps_right = slices
    shift = rng.uniform(-0.5, 0.5, size=3)
    if overlap:
        side_x = PhantomSpec.tract_x_offsets[int(rng.integers(0, 2))]
        center = (side_x + shift[0], 11.5 + shift[1], 9.5 + shift[2])
        radii = (3.0, 3.0, 3.0)
    else:
        center = (11.5 + 0.3 * shift[0], 11.5 + shift[1], 9.5 + shift[2])
        radii = (2.0, 2.0, 2.0)
    return PhantomSpec(gap_slices_left=gaps_left, gap_slices_right=gaps_right,
                       haematoma_center=center, haematoma_radii=radii,
                       seed=int(rng.integers(0, 2 ** 31)))


# --- synthetic cohorts --------------------------------------------------------

@dataclass(frozen=True)
class OutcomeEffects:
    """True linear-model coefficients and noise level for one outcome."""

    intercept: float
    overlap: float
    split: float
    age: float
    sex_male: float
    ln_haematoma_volume: float
    ivh_volume: float
    treatment_surgery: float
    noise_sd: float

    def coefficient(self, term: str) -> float:
        return getattr(self, term)


@dataclass(frozen=True)
class CohortEffects:
    nihss_baseline: OutcomeEffects
    nihss_day180: OutcomeEffects
    mrs_day365: OutcomeEffects

    def for_outcome(self, outcome: str) -> OutcomeEffects:
        return getattr(self, outcome)


def default_cohort_effects() -> CohortEffects:
    """Plausible effect sizes producing mid-range scores at low clamp rates."""
    return CohortEffects(
        nihss_baseline=OutcomeEffects(
            intercept=5.0, overlap=0.9, split=2.0, age=0.03, sex_male=0.3,
            ln_haematoma_volume=0.5, ivh_volume=0.05, treatment_surgery=-0.5,
            noise_sd=3.0),
        nihss_day180=OutcomeEffects(
            intercept=3.0, overlap=1.3, split=3.5, age=0.03, sex_male=0.2,
            ln_haematoma_volume=0.6, ivh_volume=0.06, treatment_surgery=-1.0,
            noise_sd=3.5),
        mrs_day365=OutcomeEffects(
            intercept=1.2, overlap=0.25, split=0.85, age=0.015, sex_male=0.1,
            ln_haematoma_volume=0.3, ivh_volume=0.02, treatment_surgery=-0.3,
            noise_sd=1.1),
    )


_OUTCOME_MAX = {"nihss_baseline": NIHSS_MOTOR_MAX, "nihss_day180": NIHSS_MOTOR_MAX,
                "mrs_day365": MRS_MAX}


@dataclass(frozen=True)
class SyntheticCohort:
    """A generated cohort with its intended integrity flags.

    masks is empty when mask generation was skipped; the intended flags are
    authoritative either way (mask-based assessment reproduces them).
    """

    records: tuple[SubjectRecord, ...]
    masks: tuple[tuple[MaskVolume, MaskVolume], ...]
    overlap_flags: tuple[bool, ...]
    split_flags: tuple[bool, ...]
    clamp_fractions: Mapping[str, float]
    effects: CohortEffects

    def intended_integrity(self) -> dict[str, IntegrityResult]:
        out = {}
        for rec, overlap, split in zip(self.records, self.overlap_flags,
                                       self.split_flags):
            out[rec.id] = IntegrityResult(
                overlap=overlap,
                overlap_voxels=1 if overlap else 0,
                split=split,
                split_left=split,
                split_right=False,
                gap_slices_left=(),
                gap_slices_right=(),
                missing_left=False,
                missing_right=False,
                cst_volume_ml=15.0,
                haematoma_volume_ml=rec.haematoma_volume_ml,
            )
        return out


def generate_synthetic_cohort(n: int,
                              effects: CohortEffects | None = None,
                              seed: int = 0,
                              *,
                              overlap_count: int | None = None,
                              split_count: int | None = None,
                              include_masks: bool = True,
                              missing_day180_rate: float = 0.0,
                              missing_mrs_rate: float = 0.0) -> SyntheticCohort:
    """Sample a cohort whose outcomes follow a known linear model.

    Covariates are drawn from documented plausible ranges (age uniform on
    35-85, volumes log-normal on the tens-of-mL scale); integrity flags are
    assigned to exact counts via seeded permutations; outcomes are the
    linear predictor plus Gaussian noise, rounded and clamped to the valid
    score range with the clamp rate reported. Masks realizing each
    subject's flags use per-subject seeds (seed + index).
    """
    if n < 20:
        raise ValueError(f"cohort size must be >= 20, got {n}")
    if effects is None:
        effects = default_cohort_effects()
    if overlap_count is None:
        overlap_count = round(0.25 * n)
    if split_count is None:
        split_count = round(0.35 * n)
    if not 0 <= overlap_count <= n or not 0 <= split_count <= n:
        raise ValueError("flag counts must lie in [0, n]")

    rng = np.random.default_rng(seed)
    overlap = np.zeros(n, dtype=bool)
    overlap[rng.permutation(n)[:overlap_count]] = True
    split = np.zeros(n, dtype=bool)
    split[rng.permutation(n)[:split_count]] = True

    age = rng.uniform(35.0, 85.0, size=n)
    male = rng.random(n) < 0.6
    surgery = rng.random(n) < 0.5
    hv_ml = rng.lognormal(mean=3.7, sigma=0.5, size=n)
    ivh_ml = np.where(rng.random(n) < 0.5, 0.0,
                      rng.lognormal(mean=0.8, sigma=0.9, size=n))

    design = np.column_stack([
        np.ones(n), overlap, split, age, male.astype(float), np.log(hv_ml),
        ivh_ml, surgery.astype(float),
    ])
    term_order = ("intercept", "overlap", "split", "age", "sex_male",
                  "ln_haematoma_volume", "ivh_volume", "treatment_surgery")

    outcomes: dict[str, np.ndarray] = {}
    clamp_fractions: dict[str, float] = {}
    for outcome in OUTCOMES:
        model = effects.for_outcome(outcome)
        beta = np.array([model.coefficient(t) for t in term_order])
        raw = design @ beta + model.noise_sd * rng.standard_normal(n)
        rounded = np.rint(raw)
        upper = _OUTCOME_MAX[outcome]
        clamped = np.clip(rounded, 0, upper)
        clamp_fractions[outcome] = float((clamped != rounded).mean())
        outcomes[outcome] = clamped.astype(int)

    miss_180 = rng.random(n) < missing_day180_rate
    miss_365 = rng.random(n) < missing_mrs_rate

    width = max(4, len(str(n)))
    records = []
    for i in range(n):
        records.append(SubjectRecord(
            id=f"s{i + 1:0{width}d}",
            age=float(age[i]),
            sex="male" if male[i] else "female",
            treatment="surgery" if surgery[i] else "medical",
            haematoma_volume_ml=float(hv_ml[i]),
            ivh_volume_ml=float(ivh_ml[i]),
            nihss_motor_baseline=int(outcomes["nihss_baseline"][i]),
            nihss_motor_day180=None if miss_180[i] else int(outcomes["nihss_day180"][i]),
            mrs_day365=None if miss_365[i] else int(outcomes["mrs_day365"][i]),
        ))

    masks: list[tuple[MaskVolume, MaskVolume]] = []
    if include_masks:
        for i in range(n):
            subject_rng = np.random.default_rng(seed + i)
            spec = phantom_for_flags(bool(overlap[i]), bool(split[i]), subject_rng)
            cst, haematoma, _ = generate_phantom(spec)
            masks.append((cst, haematoma))

    return SyntheticCohort(
        records=tuple(records),
        masks=tuple(masks),
        overlap_flags=tuple(bool(v) for v in overlap),
        split_flags=tuple(bool(v) for v in split),
        clamp_fractions=clamp_fractions,
        effects=effects,
    )
