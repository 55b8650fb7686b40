"""Tract-integrity assessment from co-registered segmentation masks.

The toolkit reads NIfTI-1 masks of a bilateral motor tract and of a
haematoma, derives binary integrity measures (haematoma overlap, tract
split) and Dice agreement, and runs the cohort-level statistics: a
stratified demographic table and outcome regressions with clinical
covariates. A phantom generator provides synthetic volumes with known
ground truth for testing and demos.
"""

__version__ = "0.1.0"

from .errors import CstkitError
from .grid import VolumeHeader
from .nifti_io import ScalarVolume, binarize, read_mask, read_volume, write_volume
from .mask_core import (
    MaskVolume,
    connected_components,
    filter_small_components,
    intersect,
    volume_ml,
    voxel_count,
)
from .integrity import (
    IntegrityResult,
    assess_integrity,
    detect_split,
    dice,
    haematoma_overlap,
    split_by_laterality,
)
from .clinical_stats import (
    MotorNihssComponents,
    RegressionResult,
    SubjectRecord,
    build_design_matrix,
    fit_outcome_models,
    motor_nihss,
    ols_fit,
    t_cdf,
)
from .cohort_report import build_cohort_table, median_iqr
from .phantoms import PhantomSpec, generate_phantom, generate_synthetic_cohort

__all__ = [
    "CstkitError",
    "IntegrityResult",
    "MaskVolume",
    "MotorNihssComponents",
    "PhantomSpec",
    "RegressionResult",
    "ScalarVolume",
    "SubjectRecord",
    "VolumeHeader",
    "assess_integrity",
    "binarize",
    "build_cohort_table",
    "build_design_matrix",
    "connected_components",
    "detect_split",
    "dice",
    "filter_small_components",
    "fit_outcome_models",
    "generate_phantom",
    "generate_synthetic_cohort",
    "haematoma_overlap",
    "intersect",
    "median_iqr",
    "motor_nihss",
    "ols_fit",
    "read_mask",
    "read_volume",
    "split_by_laterality",
    "t_cdf",
    "volume_ml",
    "voxel_count",
    "write_volume",
]
