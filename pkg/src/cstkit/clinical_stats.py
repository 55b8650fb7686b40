"""Outcome regression on tract-integrity predictors with clinical covariates.

Six ordinary-least-squares models are fitted: each binary integrity
predictor (haematoma overlap, tract split) against each outcome (motor
NIHSS at baseline, motor NIHSS at day 180, mRS at day 365), controlling
for age, sex, the natural logarithm of haematoma volume, intraventricular
haemorrhage volume, and randomised treatment arm.

Inference is classical (homoskedastic): residual variance from the fit,
t-based two-sided p-values and symmetric 95% confidence intervals. The
solver uses a QR decomposition; explicit normal equations appear only in
the test oracles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    ComponentOutOfRange,
    EmptyCohortAfterFiltering,
    IdMismatch,
    NonPositiveHaematomaVolume,
    RankDeficient,
    RecordsError,
    TooFewObservations,
)
from .integrity import IntegrityResult

SEXES = ("male", "female")
TREATMENTS = ("surgery", "medical")
PREDICTORS = ("overlap", "split")
OUTCOMES = ("nihss_baseline", "nihss_day180", "mrs_day365")

NIHSS_MOTOR_MAX = 19
MRS_MAX = 6

_OUTCOME_ATTR = {
    "nihss_baseline": "nihss_motor_baseline",
    "nihss_day180": "nihss_motor_day180",
    "mrs_day365": "mrs_day365",
}

COVARIATE_TERMS = ("age", "sex_male", "ln_haematoma_volume", "ivh_volume",
                   "treatment_surgery")

RECORD_COLUMNS = ("id", "age", "sex", "treatment", "hv_ml", "ivh_ml",
                  "nihss_motor_d1", "nihss_motor_d180", "mrs_d365")


# --- subject records ---------------------------------------------------------

@dataclass(frozen=True)
class MotorNihssComponents:
    """The five motor-domain items of the NIHSS."""

    facial_palsy: int
    upper_left: int
    upper_right: int
    lower_left: int
    lower_right: int

    def __post_init__(self):
        if not 0 <= self.facial_palsy <= 3:
            raise ComponentOutOfRange(
                f"facial palsy score {self.facial_palsy} outside 0-3")
        for name in ("upper_left", "upper_right", "lower_left", "lower_right"):
            value = getattr(self, name)
            if not 0 <= value <= 4:
                raise ComponentOutOfRange(f"{name} score {value} outside 0-4")


def motor_nihss(components: MotorNihssComponents) -> int:
    """Composite motor score 0-19: facial palsy plus the four limb items."""
    return (components.facial_palsy + components.upper_left
            + components.upper_right + components.lower_left
            + components.lower_right)


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's covariates and outcome scores."""

    id: str
    age: float
    sex: str
    treatment: str
    haematoma_volume_ml: float
    ivh_volume_ml: float
    nihss_motor_baseline: int
    nihss_motor_day180: int | None = None
    mrs_day365: int | None = None

    def __post_init__(self):
        if self.sex not in SEXES:
            raise ValueError(f"sex must be one of {SEXES}, got {self.sex!r}")
        if self.treatment not in TREATMENTS:
            raise ValueError(
                f"treatment must be one of {TREATMENTS}, got {self.treatment!r}")
        if not math.isfinite(self.age):
            raise ValueError(f"age must be finite, got {self.age}")
        if not (math.isfinite(self.haematoma_volume_ml)
                and self.haematoma_volume_ml > 0):
            raise NonPositiveHaematomaVolume(
                f"subject {self.id}: haematoma volume {self.haematoma_volume_ml} mL "
                "(must be > 0 for the log transform)")
        if not (math.isfinite(self.ivh_volume_ml) and self.ivh_volume_ml >= 0):
            raise ValueError(f"IVH volume must be >= 0, got {self.ivh_volume_ml}")
        _check_score("baseline motor NIHSS", self.nihss_motor_baseline, NIHSS_MOTOR_MAX)
        if self.nihss_motor_day180 is not None:
            _check_score("day-180 motor NIHSS", self.nihss_motor_day180, NIHSS_MOTOR_MAX)
        if self.mrs_day365 is not None:
            _check_score("day-365 mRS", self.mrs_day365, MRS_MAX)

    def outcome_value(self, outcome: str) -> int | None:
        return getattr(self, _OUTCOME_ATTR[outcome])


def _check_score(what: str, value: int, upper: int) -> None:
    if not isinstance(value, (int, np.integer)) or not 0 <= value <= upper:
        raise ValueError(f"{what} must be an integer in 0-{upper}, got {value!r}")


# --- records CSV -------------------------------------------------------------

def read_subject_records(path) -> list[SubjectRecord]:
    """Read subject records from CSV with the documented column schema.

    Header must name the columns exactly; missing day-180 NIHSS and day-365
    mRS are encoded as empty fields. Lines starting with '#' are skipped.
    """
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(rows)
        except StopIteration:
            raise RecordsError(f"{path}: empty records file") from None
        if tuple(h.strip() for h in header) != RECORD_COLUMNS:
            raise RecordsError(
                f"{path}: header must be exactly {','.join(RECORD_COLUMNS)}")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(RECORD_COLUMNS):
                raise RecordsError(
                    f"{path}:{lineno}: expected {len(RECORD_COLUMNS)} fields, "
                    f"got {len(row)}")
            try:
                records.append(SubjectRecord(
                    id=row[0].strip(),
                    age=float(row[1]),
                    sex=row[2].strip(),
                    treatment=row[3].strip(),
                    haematoma_volume_ml=float(row[4]),
                    ivh_volume_ml=float(row[5]),
                    nihss_motor_baseline=int(row[6]),
                    nihss_motor_day180=_opt_int(row[7]),
                    mrs_day365=_opt_int(row[8]),
                ))
            except (ValueError, NonPositiveHaematomaVolume) as exc:
                raise RecordsError(f"{path}:{lineno}: {exc}") from exc
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise RecordsError(f"{path}: duplicate subject id {rec.id!r}")
        seen.add(rec.id)
    return records


def _opt_int(field: str) -> int | None:
    field = field.strip()
    return None if field == "" else int(field)


def write_subject_records(records: Sequence[SubjectRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow([
                rec.id, repr(rec.age), rec.sex, rec.treatment,
                repr(rec.haematoma_volume_ml), repr(rec.ivh_volume_ml),
                rec.nihss_motor_baseline,
                "" if rec.nihss_motor_day180 is None else rec.nihss_motor_day180,
                "" if rec.mrs_day365 is None else rec.mrs_day365,
            ])


# --- design matrix -----------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    """Complete-case design for one (predictor, outcome) model."""

    x: np.ndarray
    y: np.ndarray
    term_names: tuple[str, ...]
    ids: tuple[str, ...]
    n_dropped: int


def build_design_matrix(cohort: Sequence[SubjectRecord],
                        integrity: Mapping[str, IntegrityResult],
                        predictor: str,
                        outcome: str) -> DesignMatrix:
    """Assemble the regression design for one integrity predictor and outcome.

    Column order is fixed: intercept, predictor (0/1), age, sex (male=1),
    ln(haematoma volume mL), IVH volume mL, treatment (surgery=1). Subjects
    missing the outcome are dropped (complete case) and counted.
    """
    if predictor not in PREDICTORS:
        raise ValueError(f"predictor must be one of {PREDICTORS}, got {predictor!r}")
    if outcome not in OUTCOMES:
        raise ValueError(f"outcome must be one of {OUTCOMES}, got {outcome!r}")

    rows, y, ids = [], [], []
    n_dropped = 0
    for rec in cohort:
        try:
            flags = integrity[rec.id]
        except KeyError:
            raise IdMismatch(f"no integrity result for subject {rec.id!r}") from None
        value = rec.outcome_value(outcome)
        if value is None:
            n_dropped += 1
            continue
        if rec.haematoma_volume_ml <= 0:
            raise NonPositiveHaematomaVolume(
                f"subject {rec.id}: haematoma volume must be positive")
        flag = flags.overlap if predictor == "overlap" else flags.split
        rows.append([
            1.0,
            1.0 if flag else 0.0,
            rec.age,
            1.0 if rec.sex == "male" else 0.0,
            math.log(rec.haematoma_volume_ml),
            rec.ivh_volume_ml,
            1.0 if rec.treatment == "surgery" else 0.0,
        ])
        y.append(float(value))
        ids.append(rec.id)
    if not rows:
        raise EmptyCohortAfterFiltering(
            f"no subject has a non-missing {outcome} outcome")
    return DesignMatrix(
        x=np.asarray(rows, dtype=np.float64),
        y=np.asarray(y, dtype=np.float64),
        term_names=("intercept", predictor) + COVARIATE_TERMS,
        ids=tuple(ids),
        n_dropped=n_dropped,
    )


# --- Student's t distribution ------------------------------------------------

_BETACF_MAX_ITER = 2000
_BETACF_EPS = 1e-16
_BETACF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError(
        f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # Evaluate the continued fraction on whichever side converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _t_tail_prob(t_abs: float, dof: int) -> float:
    """P(T > t_abs) for t_abs >= 0.

    Two algebraically equivalent incomplete-beta forms are used so the beta
    argument never approaches 1: the central form for |t| <= sqrt(dof) and
    the tail form beyond. This keeps absolute error ~1e-15 for both tiny and
    huge t.
    """
    t2 = t_abs * t_abs
    if t2 <= dof:
        central = regularized_incomplete_beta(0.5, 0.5 * dof, t2 / (dof + t2))
        return 0.5 * (1.0 - central)
    return 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t2))


def t_cdf(t: float, dof: int) -> float:
    """Cumulative distribution of Student's t with dof degrees of freedom."""
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    t = float(t)
    if t == 0.0:
        return 0.5
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = _t_tail_prob(abs(t), dof)
    return 1.0 - tail if t > 0 else tail


def t_two_sided_p(t: float, dof: int) -> float:
    """Two-sided p-value for a t statistic."""
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return 2.0 * _t_tail_prob(abs(t), dof)


def t_quantile(q: float, dof: int) -> float:
    """Inverse of t_cdf by bisection on the monotone CDF."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_quantile(1.0 - q, dof)
    hi = 1.0
    while t_cdf(hi, dof) < q and hi < 1e12:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if t_cdf(mid, dof) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- ordinary least squares --------------------------------------------------

@dataclass(frozen=True)
class RegressionResult:
    """Fitted OLS model with classical inference.

    When the fit is exact (zero residual variance) inference is flagged
    degenerate: standard errors are 0, t statistics and p-values are NaN and
    the intervals collapse onto the point estimates.
    """

    term_names: tuple[str, ...]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    n: int
    dof: int
    r_squared: float
    degenerate: bool = False
    predictor: str | None = None
    outcome: str | None = None
    n_dropped: int = 0

    def term(self, name: str) -> int:
        return self.term_names.index(name)


def ols_fit(x: np.ndarray, y: np.ndarray,
            term_names: Sequence[str] | None = None) -> RegressionResult:
    """Least-squares fit via QR with classical (homoskedastic) inference.

    Requires n > k and a full-column-rank design. 95% confidence intervals
    use the t quantile at n - k degrees of freedom.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise ValueError("design matrix must be 2-D")
    n, k = x.shape
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]} entries")
    if n <= k:
        raise TooFewObservations(f"{n} observations cannot identify {k} terms")
    if term_names is None:
        term_names = tuple(f"x{i}" for i in range(k))
    else:
        term_names = tuple(term_names)
        if len(term_names) != k:
            raise ValueError("one term name per design column required")

    q, r = np.linalg.qr(x)
    r_diag = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(np.float64).eps * (r_diag.max() if k else 0.0)
    if k == 0 or r_diag.min() <= tol:
        raise RankDeficient("design matrix has collinear or zero columns")

    beta = solve_triangular(r, q.T @ y, lower=False)
    residuals = y - x @ beta
    rss = float(residuals @ residuals)
    dof = n - k
    scale = max(1.0, float(y @ y))
    degenerate = rss <= n * (1e3 * np.finfo(np.float64).eps) ** 2 * scale

    r_inv = solve_triangular(r, np.eye(k), lower=False)
    xtx_inv_diag = (r_inv * r_inv).sum(axis=1)

    if degenerate:
        se = np.zeros(k)
        t_stats = np.full(k, np.nan)
        p_values = np.full(k, np.nan)
        ci_low = beta.copy()
        ci_high = beta.copy()
    else:
        s2 = rss / dof
        se = np.sqrt(s2 * xtx_inv_diag)
        t_stats = beta / se
        p_values = np.array([t_two_sided_p(t, dof) for t in t_stats])
        half_width = t_quantile(0.975, dof) * se
        ci_low = beta - half_width
        ci_high = beta + half_width

    y_centered = y - y.mean()
    tss = float(y_centered @ y_centered)
    if tss > 0.0:
        r_squared = max(0.0, min(1.0, 1.0 - rss / tss))
    else:
        r_squared = 1.0 if degenerate else 0.0

    return RegressionResult(
        term_names=term_names,
        coefficients=beta,
        standard_errors=se,
        ci_low=ci_low,
        ci_high=ci_high,
        t_stats=t_stats,
        p_values=p_values,
        n=n,
        dof=dof,
        r_squared=r_squared,
        degenerate=degenerate,
    )


# --- the six study models ----------------------------------------------------

def fit_model(cohort: Sequence[SubjectRecord],
              integrity: Mapping[str, IntegrityResult],
              predictor: str, outcome: str) -> RegressionResult:
    design = build_design_matrix(cohort, integrity, predictor, outcome)
    result = ols_fit(design.x, design.y, design.term_names)
    return replace(result, predictor=predictor, outcome=outcome,
                   n_dropped=design.n_dropped)


def fit_outcome_models(cohort: Sequence[SubjectRecord],
                     integrity: Mapping[str, IntegrityResult],
                     joint: bool = False) -> list[RegressionResult]:
    """Fit every (predictor, outcome) model; six in total.

    With joint=True a sensitivity variant is fitted instead: one model per
    outcome carrying both integrity predictors simultaneously.
    """
    if joint:
        return [_fit_joint(cohort, integrity, outcome) for outcome in OUTCOMES]
    return [fit_model(cohort, integrity, predictor, outcome)
            for outcome in OUTCOMES for predictor in PREDICTORS]


def _fit_joint(cohort, integrity, outcome: str) -> RegressionResult:
    base = build_design_matrix(cohort, integrity, "overlap", outcome)
    split_col = np.array(
        [1.0 if integrity[i].split else 0.0 for i in base.ids])[:, None]
    x = np.hstack([base.x[:, :2], split_col, base.x[:, 2:]])
    names = ("intercept", "overlap", "split") + COVARIATE_TERMS
    result = ols_fit(x, base.y, names)
    return replace(result, predictor="overlap+split", outcome=outcome,
                   n_dropped=base.n_dropped)


# --- report formatting -------------------------------------------------------

def significance_stars(p: float) -> str:
    """Star notation with strict thresholds; non-significant renders (ns)."""
    if math.isnan(p):
        return "(ns)"
    if p < 1e-4:
        return "****"
    if p < 1e-3:
        return "***"
    if p < 1e-2:
        return "**"
    if p < 0.05:
        return "*"
    return "(ns)"


def format_p(p: float) -> str:
    """p-value rendering: below 1e-4 prints as '<0.0001'."""
    if math.isnan(p):
        return "n/a"
    if p < 1e-4:
        return "<0.0001"
    if p < 1e-3:
        return f"{p:.4f}"
    return f"{p:.3f}"


def format_coefficient(result: RegressionResult, term: str) -> str:
    i = result.term(term)
    return (f"{result.coefficients[i]:.2f} "
            f"[{result.ci_low[i]:.2f}, {result.ci_high[i]:.2f}]")
