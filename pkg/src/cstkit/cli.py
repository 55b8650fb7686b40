"""Command-line pipeline: dice, integrity, analyze, phantom, cohort-sim.

Subjects are processed with per-subject fault isolation: one unreadable
file is logged and skipped rather than aborting the batch (unless --strict
is given). Outputs are emitted in deterministic id order and report files
carry a metadata header instead of timestamps, so identical inputs and
seed produce byte-identical reports.

Exit codes: 0 success (possibly with logged per-subject failures),
1 usage or validation error, 2 no subject could be processed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .clinical_stats import (
    OUTCOMES,
    RegressionResult,
    fit_outcome_models,
    format_coefficient,
    format_p,
    read_subject_records,
    significance_stars,
    write_subject_records,
)
from .cohort_report import (
    QUANTILE_CONVENTION,
    build_cohort_table,
    cohort_table_rows,
    render_cohort_table,
)
from .errors import CstkitError
from .integrity import IntegrityResult, assess_integrity
from .manifest import RunManifest, parse_manifest, parse_phantom_spec
from .mask_core import filter_small_components
from .nifti_io import read_mask, write_mask
from .phantoms import generate_phantom, generate_synthetic_cohort

SE_CONVENTION = "classical homoskedastic OLS (robust variants not implemented)"

OUTCOME_TITLES = {
    "nihss_baseline": "Motor NIHSS day 1",
    "nihss_day180": "Motor NIHSS day 180",
    "mrs_day365": "mRS day 365",
}

INTEGRITY_COLUMNS = ("id", "overlap", "overlap_voxels", "split", "split_left",
                     "split_right", "cst_ml", "haematoma_ml")


# --- report plumbing ----------------------------------------------------------

def metadata_lines(**settings) -> list[str]:
    lines = [f"# tool: cstkit {__version__}"]
    for key, value in settings.items():
        lines.append(f"# {key.replace('_', '-')}: {value}")
    return lines


def _bool(value: bool) -> str:
    return "true" if value else "false"


def _parse_bool(raw: str) -> bool:
    if raw not in ("true", "false"):
        raise ValueError(f"expected true/false, got {raw!r}")
    return raw == "true"


def write_integrity_table(results: Mapping[str, IntegrityResult], path,
                          metadata: Sequence[str] = ()) -> None:
    """Delimited per-subject integrity table, rows ordered by id."""
    with open(path, "w", newline="") as fh:
        for line in metadata:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(INTEGRITY_COLUMNS)
        for subject_id in sorted(results):
            r = results[subject_id]
            writer.writerow([
                subject_id, _bool(r.overlap), r.overlap_voxels, _bool(r.split),
                _bool(r.split_left), _bool(r.split_right),
                repr(r.cst_volume_ml), repr(r.haematoma_volume_ml),
            ])


def read_integrity_table(path) -> dict[str, IntegrityResult]:
    """Read a table written by write_integrity_table.

    Gap-slice and missing-side detail lives in the JSON report, not the
    table; reconstructed records carry empty gap lists.
    """
    path = Path(path)
    results: dict[str, IntegrityResult] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header) != INTEGRITY_COLUMNS:
            raise CstkitError(
                f"{path}: header must be exactly {','.join(INTEGRITY_COLUMNS)}")
        for row in rows:
            if not row:
                continue
            if len(row) != len(INTEGRITY_COLUMNS):
                raise CstkitError(f"{path}: malformed row {row!r}")
            try:
                split_left = _parse_bool(row[4])
                split_right = _parse_bool(row[5])
                results[row[0]] = IntegrityResult(
                    overlap=_parse_bool(row[1]),
                    overlap_voxels=int(row[2]),
                    split=_parse_bool(row[3]),
                    split_left=split_left,
                    split_right=split_right,
                    gap_slices_left=(),
                    gap_slices_right=(),
                    missing_left=False,
                    missing_right=False,
                    cst_volume_ml=float(row[6]),
                    haematoma_volume_ml=float(row[7]),
                )
            except ValueError as exc:
                raise CstkitError(f"{path}: bad row for {row[0]!r}: {exc}") from exc
    return results


def _integrity_json(results: Mapping[str, IntegrityResult],
                    failures: Mapping[str, str],
                    settings: Mapping[str, object]) -> str:
    payload = {
        "tool": f"cstkit {__version__}",
        "settings": dict(settings),
        "subjects": {
            subject_id: {
                "overlap": r.overlap,
                "overlap_voxels": r.overlap_voxels,
                "split": r.split,
                "split_left": r.split_left,
                "split_right": r.split_right,
                "gap_slices_left": list(r.gap_slices_left),
                "gap_slices_right": list(r.gap_slices_right),
                "missing_left": r.missing_left,
                "missing_right": r.missing_right,
                "cst_volume_ml": r.cst_volume_ml,
                "haematoma_volume_ml": r.haematoma_volume_ml,
            }
            for subject_id, r in sorted(results.items())
        },
        "failures": {k: failures[k] for k in sorted(failures)},
    }
    return json.dumps(payload, indent=2) + "\n"


def render_regression_report(models: Sequence[RegressionResult]) -> str:
    """Per-model summary block plus the compact predictor table."""
    lines = ["Integrity predictors (coefficient [95% CI], p-value):", ""]
    header = f"{'Outcome':<22}{'Predictor':<16}{'Coefficient [95% CI]':<28}p-value"
    lines.append(header)
    lines.append("-" * len(header))
    for model in models:
        for predictor in model.predictor.split("+"):
            beta_ci = format_coefficient(model, predictor)
            p = model.p_values[model.term(predictor)]
            lines.append(f"{OUTCOME_TITLES[model.outcome]:<22}{predictor:<16}"
                         f"{beta_ci:<28}{format_p(p)} {significance_stars(p)}")
    lines.append("")
    for model in models:
        lines.append(f"Model: {OUTCOME_TITLES[model.outcome]} ~ {model.predictor} "
                     f"+ covariates")
        lines.append(f"  n = {model.n} (dropped {model.n_dropped} with missing "
                     f"outcome), dof = {model.dof}, R^2 = {model.r_squared:.3f}")
        for i, term in enumerate(model.term_names):
            stars = significance_stars(model.p_values[i])
            lines.append(
                f"  {term:<22}{model.coefficients[i]:>10.4f}  "
                f"[{model.ci_low[i]:>9.4f}, {model.ci_high[i]:>9.4f}]  "
                f"p = {format_p(model.p_values[i])} {stars}")
        lines.append("")
    return "\n".join(lines)


def write_regression_csv(models: Sequence[RegressionResult], path,
                         metadata: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in metadata:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["outcome", "predictor", "term", "coefficient", "se",
                         "ci_low", "ci_high", "t", "p", "stars", "n",
                         "n_dropped", "r_squared"])
        for model in models:
            for i, term in enumerate(model.term_names):
                writer.writerow([
                    model.outcome, model.predictor, term,
                    repr(float(model.coefficients[i])),
                    repr(float(model.standard_errors[i])),
                    repr(float(model.ci_low[i])), repr(float(model.ci_high[i])),
                    repr(float(model.t_stats[i])), repr(float(model.p_values[i])),
                    significance_stars(model.p_values[i]),
                    model.n, model.n_dropped, repr(model.r_squared),
                ])


def write_cohort_table_files(table, out_dir: Path, metadata: Sequence[str]) -> None:
    (out_dir / "cohort_table.txt").write_text(
        "\n".join(metadata) + "\n\n" + render_cohort_table(table))
    rows = cohort_table_rows(table)
    with open(out_dir / "cohort_table.csv", "w", newline="") as fh:
        for line in metadata:
            fh.write(line + "\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


# --- subcommands ----------------------------------------------------------------

def cmd_dice(args) -> int:
    from .integrity import dice

    pred = read_mask(args.prediction, args.threshold)
    truth = read_mask(args.truth, args.threshold)
    print(f"{dice(pred, truth):.4f}")
    return 0


@dataclass
class _SubjectOutcome:
    subject_id: str
    result: IntegrityResult | None = None
    error: str | None = None


def _assess_subject(entry, manifest: RunManifest) -> _SubjectOutcome:
    try:
        cst = read_mask(entry.cst_path, manifest.threshold)
        haematoma = read_mask(entry.haematoma_path, manifest.threshold)
        if manifest.min_component > 0:
            cst = filter_small_components(cst, manifest.min_component,
                                          manifest.connectivity)
            haematoma = filter_small_components(haematoma, manifest.min_component,
                                                manifest.connectivity)
        midline = entry.midline_x if entry.midline_x is not None else manifest.midline_x
        result = assess_integrity(cst, haematoma, midline)
        return _SubjectOutcome(entry.id, result=result)
    except (CstkitError, OSError) as exc:
        return _SubjectOutcome(entry.id, error=f"{type(exc).__name__}: {exc}")


def cmd_integrity(args) -> int:
    manifest = parse_manifest(args.manifest)
    if args.threshold is not None:
        manifest = replace(manifest, threshold=args.threshold)
    if args.connectivity is not None:
        manifest = replace(manifest, connectivity=args.connectivity)
    if args.min_component is not None:
        manifest = replace(manifest, min_component=args.min_component)
    if args.midline_x is not None:
        manifest = replace(manifest, midline_x=args.midline_x)
    out_dir = _resolve_output(args.output, manifest.output_dir)

    entries = sorted(manifest.subjects, key=lambda e: e.id)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(lambda e: _assess_subject(e, manifest), entries))
    else:
        outcomes = [_assess_subject(entry, manifest) for entry in entries]

    results: dict[str, IntegrityResult] = {}
    failures: dict[str, str] = {}
    for outcome in outcomes:
        if outcome.error is None:
            results[outcome.subject_id] = outcome.result
        else:
            failures[outcome.subject_id] = outcome.error
            print(f"warning: subject {outcome.subject_id}: {outcome.error}",
                  file=sys.stderr)
            if args.strict:
                print("error: --strict given, aborting on first failure",
                      file=sys.stderr)
                return 1
    if not results:
        print("error: no subject could be processed", file=sys.stderr)
        return 2

    settings = {
        "threshold": manifest.threshold,
        "connectivity": manifest.connectivity,
        "min_component": manifest.min_component,
        "midline_x": ("auto (volume midpoint)" if manifest.midline_x is None
                      else manifest.midline_x),
        "mask_provenance": args.mask_provenance,
    }
    meta = metadata_lines(**settings)
    write_integrity_table(results, out_dir / "integrity.csv", meta)
    (out_dir / "integrity.json").write_text(
        _integrity_json(results, failures, settings))
    print(f"{len(results)} subjects assessed, {len(failures)} failed; "
          f"reports in {out_dir}")
    return 0


def cmd_analyze(args) -> int:
    records = read_subject_records(args.records)
    integrity = read_integrity_table(args.integrity_table)
    out_dir = _resolve_output(args.output, None)
    meta = metadata_lines(quantiles=QUANTILE_CONVENTION,
                          standard_errors=SE_CONVENTION,
                          mask_provenance=args.mask_provenance)

    table = build_cohort_table(records, integrity)
    write_cohort_table_files(table, out_dir, meta)

    models = fit_outcome_models(records, integrity, joint=args.joint)
    report = render_regression_report(models)
    (out_dir / "regressions.txt").write_text("\n".join(meta) + "\n\n" + report)
    write_regression_csv(models, out_dir / "regressions.csv", meta)

    print(render_cohort_table(table))
    print(report)
    print(f"reports in {out_dir}")
    return 0


def cmd_phantom(args) -> int:
    spec = parse_phantom_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out_dir = _resolve_output(args.output, None)
    cst, haematoma, truth = generate_phantom(spec)
    write_mask(cst, out_dir / "cst.nii.gz")
    write_mask(haematoma, out_dir / "haematoma.nii.gz")
    truth_payload = {
        "overlap": truth.overlap,
        "overlap_voxels": truth.overlap_voxels,
        "split": truth.split,
        "split_left": truth.split_left,
        "split_right": truth.split_right,
        "gap_slices_left": list(truth.gap_slices_left),
        "gap_slices_right": list(truth.gap_slices_right),
        "missing_left": truth.missing_left,
        "missing_right": truth.missing_right,
        "cst_volume_ml": truth.cst_volume_ml,
        "haematoma_volume_ml": truth.haematoma_volume_ml,
    }
    (out_dir / "truth.json").write_text(json.dumps(truth_payload, indent=2) + "\n")
    print(f"overlap={_bool(truth.overlap)} split={_bool(truth.split)} "
          f"(left={_bool(truth.split_left)}, right={_bool(truth.split_right)})")
    print(f"phantom written to {out_dir}")
    return 0


def cmd_cohort_sim(args) -> int:
    out_dir = _resolve_output(args.output, None)
    cohort = generate_synthetic_cohort(
        args.subjects,
        seed=args.seed,
        overlap_count=args.overlap_count,
        split_count=args.split_count,
        include_masks=not args.no_masks,
        missing_day180_rate=args.missing_day180_rate,
        missing_mrs_rate=args.missing_mrs_rate,
    )
    if cohort.masks:
        integrity = {
            rec.id: assess_integrity(cst, haematoma)
            for rec, (cst, haematoma) in zip(cohort.records, cohort.masks)
        }
    else:
        integrity = cohort.intended_integrity()

    write_subject_records(cohort.records, out_dir / "records.csv")
    settings = {
        "seed": args.seed,
        "subjects": args.subjects,
        "overlap_count": sum(cohort.overlap_flags),
        "split_count": sum(cohort.split_flags),
        "mask_provenance": "synthetic",
    }
    meta = metadata_lines(**settings)
    write_integrity_table(integrity, out_dir / "integrity.csv", meta)

    report_meta = metadata_lines(quantiles=QUANTILE_CONVENTION,
                                 standard_errors=SE_CONVENTION, **settings)
    table = build_cohort_table(cohort.records, integrity)
    write_cohort_table_files(table, out_dir, report_meta)
    models = fit_outcome_models(cohort.records, integrity)
    report = render_regression_report(models)
    (out_dir / "regressions.txt").write_text("\n".join(report_meta) + "\n\n" + report)
    write_regression_csv(models, out_dir / "regressions.csv", report_meta)

    effects_payload = {
        outcome: {
            term: getattr(cohort.effects.for_outcome(outcome), term)
            for term in ("intercept", "overlap", "split", "age", "sex_male",
                         "ln_haematoma_volume", "ivh_volume", "treatment_surgery",
                         "noise_sd")
        }
        for outcome in OUTCOMES
    }
    effects_payload["clamp_fractions"] = cohort.clamp_fractions
    (out_dir / "effects.json").write_text(json.dumps(effects_payload, indent=2) + "\n")

    print(render_cohort_table(table))
    print(report)
    print(f"simulated cohort written to {out_dir}")
    return 0


# --- wiring ---------------------------------------------------------------------

def _resolve_output(cli_value, manifest_value) -> Path:
    out = Path(cli_value) if cli_value else (manifest_value or Path("."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cstkit",
        description="Tract-integrity metrics from co-registered masks, with "
                    "cohort-level outcome statistics.")
    parser.add_argument("--version", action="version",
                        version=f"cstkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dice = sub.add_parser("dice", help="Dice similarity of two mask volumes")
    p_dice.add_argument("prediction")
    p_dice.add_argument("truth")
    p_dice.add_argument("--threshold", type=float, default=0.5,
                        help="binarization level as a fraction of each map's "
                             "value range (default 0.5, the range midpoint)")
    p_dice.set_defaults(func=cmd_dice)

    p_int = sub.add_parser("integrity",
                           help="per-subject overlap/split assessment from a manifest")
    p_int.add_argument("manifest")
    p_int.add_argument("--output", help="output directory")
    p_int.add_argument("--threshold", type=float, default=None,
                       help="override manifest threshold (fraction of value range)")
    p_int.add_argument("--connectivity", type=int, choices=(6, 26), default=None)
    p_int.add_argument("--min-component", type=int, default=None,
                       help="drop mask components smaller than this many voxels")
    p_int.add_argument("--midline-x", type=float, default=None,
                       help="midsagittal plane in world mm (default: volume midpoint)")
    p_int.add_argument("--jobs", type=int, default=1)
    p_int.add_argument("--strict", action="store_true",
                       help="abort on the first subject failure")
    p_int.add_argument("--mask-provenance", default="unknown",
                       choices=("predicted", "manual", "synthetic", "unknown"),
                       help="recorded in report metadata")
    p_int.set_defaults(func=cmd_integrity)

    p_an = sub.add_parser("analyze",
                          help="cohort summary table and outcome regressions")
    p_an.add_argument("records", help="subject records CSV")
    p_an.add_argument("integrity_table", help="integrity.csv from the integrity step")
    p_an.add_argument("--output", help="output directory")
    p_an.add_argument("--joint", action="store_true",
                      help="fit both integrity predictors jointly per outcome")
    p_an.add_argument("--mask-provenance", default="unknown",
                      choices=("predicted", "manual", "synthetic", "unknown"))
    p_an.set_defaults(func=cmd_analyze)

    p_ph = sub.add_parser("phantom", help="generate a synthetic tract/haematoma pair")
    p_ph.add_argument("spec", help="phantom spec file")
    p_ph.add_argument("--output", help="output directory")
    p_ph.add_argument("--seed", type=int, default=None,
                      help="override the spec seed")
    p_ph.set_defaults(func=cmd_phantom)

    p_cs = sub.add_parser("cohort-sim",
                          help="simulate a cohort with known effects, then analyze it")
    p_cs.add_argument("--subjects", type=int, default=487)
    p_cs.add_argument("--overlap-count", type=int, default=None)
    p_cs.add_argument("--split-count", type=int, default=None)
    p_cs.add_argument("--seed", type=int, default=0)
    p_cs.add_argument("--output", help="output directory")
    p_cs.add_argument("--no-masks", action="store_true",
                      help="skip mask synthesis; use intended flags directly")
    p_cs.add_argument("--missing-day180-rate", type=float, default=0.0)
    p_cs.add_argument("--missing-mrs-rate", type=float, default=0.0)
    p_cs.set_defaults(func=cmd_cohort_sim)
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv if argv is None else list(argv))
    try:
        return args.func(args)
    except (CstkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
