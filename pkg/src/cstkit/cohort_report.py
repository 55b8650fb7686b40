"""Demographic and outcome summary stratified by tract-integrity group.

One column per stratum: the whole cohort, subjects with/without haematoma
overlap of the tract, and subjects with/without a tract split. Counts are
reported for sex and treatment, means for age and volumes, and
median [IQR] for the ordinal outcome scores. Quantiles use the type-7
(linear interpolation) convention; the IQR is the single width Q3 - Q1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .clinical_stats import SubjectRecord
from .errors import EmptyCohort, EmptyInput, IdMismatch
from .integrity import IntegrityResult

QUANTILE_CONVENTION = "type-7 (linear interpolation of order statistics)"

COLUMN_ORDER = ("all", "cst_involvement", "no_cst_involvement",
                "tract_split", "no_split")

COLUMN_TITLES = {
    "all": "All",
    "cst_involvement": "CST involvement",
    "no_cst_involvement": "No CST involvement",
    "tract_split": "Tract split",
    "no_split": "No split",
}


def _quantile_type7(ordered: Sequence[float], p: float) -> float:
    """Linear-interpolation quantile of pre-sorted data."""
    n = len(ordered)
    if n == 1:
        return float(ordered[0])
    h = (n - 1) * p
    lo = int(h)
    frac = h - lo
    if frac == 0.0:
        return float(ordered[lo])
    return float(ordered[lo]) + frac * (float(ordered[lo + 1]) - float(ordered[lo]))


def median_iqr(values: Sequence[float]) -> tuple[float, float]:
    """Median and interquartile range (Q3 - Q1) of a nonempty list.

    The median follows the midpoint-of-middle-two rule for even n, which is
    the type-7 quantile at p = 0.5.
    """
    if len(values) == 0:
        raise EmptyInput("median of an empty list requested")
    ordered = sorted(float(v) for v in values)
    q1 = _quantile_type7(ordered, 0.25)
    q3 = _quantile_type7(ordered, 0.75)
    return _quantile_type7(ordered, 0.5), q3 - q1


@dataclass(frozen=True)
class ScoreCell:
    """Median [IQR] of an outcome within a stratum, with the usable n."""

    median: float
    iqr: float
    n: int

    def render(self) -> str:
        return f"{self.median:g} [{self.iqr:g}]"


@dataclass(frozen=True)
class StratumSummary:
    n: int
    age_mean: float | None
    sex_male_n: int
    surgery_n: int
    haematoma_volume_mean_ml: float | None
    ivh_volume_mean_ml: float | None
    nihss_baseline: ScoreCell | None
    nihss_day180: ScoreCell | None
    mrs_day365: ScoreCell | None


@dataclass(frozen=True)
class CohortTable:
    """Summary table; one StratumSummary per column."""

    columns: Mapping[str, StratumSummary]

    def __post_init__(self):
        cols = self.columns
        n_all = cols["all"].n
        if cols["cst_involvement"].n + cols["no_cst_involvement"].n != n_all:
            raise ValueError("overlap strata do not partition the cohort")
        if cols["tract_split"].n + cols["no_split"].n != n_all:
            raise ValueError("split strata do not partition the cohort")


def _mean(values: list[float]) -> float | None:
    # fsum is exactly rounded, so the cell is invariant to subject order
    return math.fsum(values) / len(values) if values else None


def _score_cell(values: list[int]) -> ScoreCell | None:
    if not values:
        return None
    med, iqr = median_iqr(values)
    return ScoreCell(median=med, iqr=iqr, n=len(values))


def _summarize(records: Sequence[SubjectRecord]) -> StratumSummary:
    return StratumSummary(
        n=len(records),
        age_mean=_mean([r.age for r in records]),
        sex_male_n=sum(1 for r in records if r.sex == "male"),
        surgery_n=sum(1 for r in records if r.treatment == "surgery"),
        haematoma_volume_mean_ml=_mean([r.haematoma_volume_ml for r in records]),
        ivh_volume_mean_ml=_mean([r.ivh_volume_ml for r in records]),
        nihss_baseline=_score_cell([r.nihss_motor_baseline for r in records]),
        nihss_day180=_score_cell(
            [r.nihss_motor_day180 for r in records if r.nihss_motor_day180 is not None]),
        mrs_day365=_score_cell(
            [r.mrs_day365 for r in records if r.mrs_day365 is not None]),
    )


def build_cohort_table(cohort: Sequence[SubjectRecord],
                       integrity: Mapping[str, IntegrityResult]) -> CohortTable:
    """Compute every stratum summary; missing outcomes excluded per cell."""
    if not cohort:
        raise EmptyCohort("cohort table requested for zero subjects")
    for rec in cohort:
        if rec.id not in integrity:
            raise IdMismatch(f"no integrity result for subject {rec.id!r}")
    strata = {
        "all": list(cohort),
        "cst_involvement": [r for r in cohort if integrity[r.id].overlap],
        "no_cst_involvement": [r for r in cohort if not integrity[r.id].overlap],
        "tract_split": [r for r in cohort if integrity[r.id].split],
        "no_split": [r for r in cohort if not integrity[r.id].split],
    }
    return CohortTable({name: _summarize(records) for name, records in strata.items()})


# --- rendering ---------------------------------------------------------------

_ROWS = (
    ("n", lambda s: str(s.n)),
    ("Age (mean)", lambda s: "-" if s.age_mean is None else f"{s.age_mean:.1f}"),
    ("Sex male (n)", lambda s: str(s.sex_male_n)),
    ("Surgery (n)", lambda s: str(s.surgery_n)),
    ("Haematoma volume mL (mean)",
     lambda s: "-" if s.haematoma_volume_mean_ml is None
     else f"{s.haematoma_volume_mean_ml:.1f}"),
    ("IVH volume mL (mean)",
     lambda s: "-" if s.ivh_volume_mean_ml is None else f"{s.ivh_volume_mean_ml:.1f}"),
    ("NIHSS baseline (median [IQR])",
     lambda s: "-" if s.nihss_baseline is None else s.nihss_baseline.render()),
    ("NIHSS day 180 (median [IQR])",
     lambda s: "-" if s.nihss_day180 is None else s.nihss_day180.render()),
    ("mRS day 365 (median [IQR])",
     lambda s: "-" if s.mrs_day365 is None else s.mrs_day365.render()),
)


def render_cohort_table(table: CohortTable) -> str:
    """Plain-text aligned rendering of the summary table."""
    headers = [""] + [COLUMN_TITLES[c] for c in COLUMN_ORDER]
    body = [[label] + [cell(table.columns[c]) for c in COLUMN_ORDER]
            for label, cell in _ROWS]
    widths = [max(len(row[i]) for row in [headers] + body)
              for i in range(len(headers))]
    lines = []
    for row in [headers] + body:
        lines.append("  ".join(
            cell.ljust(w) if i == 0 else cell.rjust(w)
            for i, (cell, w) in enumerate(zip(row, widths))).rstrip())
    lines.append("")
    lines.append(f"Quantiles: {QUANTILE_CONVENTION}; IQR reported as Q3 - Q1.")
    return "\n".join(lines) + "\n"


def cohort_table_rows(table: CohortTable) -> list[dict[str, str]]:
    """Machine-readable rows (one dict per table row) for delimited output."""
    rows = []
    for label, cell in _ROWS:
        row = {"row": label}
        for col in COLUMN_ORDER:
            row[col] = cell(table.columns[col])
        rows.append(row)
    return rows
