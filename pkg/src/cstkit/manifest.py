"""Plain-text run manifests and phantom spec files.

Both are INI-style files (configparser syntax). The grammar is documented
in the README; in short, a run manifest pairs each subject id with its
tract and haematoma mask paths:

    [run]
    records = cohort.csv          ; optional
    threshold = 0.5               ; fraction of each map's value range
    connectivity = 26
    min_component = 0
    midline_x = 11.5              ; optional, world mm

    [subjects]
    s001 = s001_cst.nii.gz, s001_haematoma.nii.gz
    s002 = s002_cst.nii.gz, s002_haematoma.nii.gz, midline=10.0

and a phantom spec lists the geometry fields:

    [phantom]
    dims = 24 24 20
    ...
    [gaps]
    left = 8 9
    right =

Relative paths resolve against the manifest file's directory. Subject ids
must be unique (duplicate keys are rejected by the parser).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError
from .phantoms import PhantomSpec


@dataclass(frozen=True)
class SubjectEntry:
    id: str
    cst_path: Path
    haematoma_path: Path
    midline_x: float | None = None


@dataclass(frozen=True)
class RunManifest:
    subjects: tuple[SubjectEntry, ...]
    records_path: Path | None = None
    threshold: float = 0.5
    connectivity: int = 26
    min_component: int = 0
    midline_x: float | None = None
    output_dir: Path | None = None


def _load_ini(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # preserve subject-id case
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ManifestError(f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    return parser


def _get_float(section, key: str, default: float | None, path: Path) -> float | None:
    raw = section.get(key, None)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ManifestError(f"{path}: {key} must be a number, got {raw!r}") from None


def _get_int(section, key: str, default: int, path: Path) -> int:
    raw = section.get(key, None)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ManifestError(f"{path}: {key} must be an integer, got {raw!r}") from None


def parse_manifest(path) -> RunManifest:
    """Parse and validate a run manifest; referenced paths must exist."""
    path = Path(path)
    parser = _load_ini(path)
    base = path.parent

    run = parser["run"] if parser.has_section("run") else {}
    records_path = None
    if isinstance(run, configparser.SectionProxy):
        raw_records = run.get("records", "").strip()
        if raw_records:
            records_path = (base / raw_records).resolve()
            if not records_path.is_file():
                raise ManifestError(f"{path}: records file {records_path} not found")
    threshold = _get_float(run, "threshold", 0.5, path)
    connectivity = _get_int(run, "connectivity", 26, path)
    if connectivity not in (6, 26):
        raise ManifestError(f"{path}: connectivity must be 6 or 26")
    min_component = _get_int(run, "min_component", 0, path)
    if min_component < 0:
        raise ManifestError(f"{path}: min_component must be >= 0")
    midline_x = _get_float(run, "midline_x", None, path)
    output_dir = None
    if isinstance(run, configparser.SectionProxy):
        raw_out = run.get("output", "").strip()
        if raw_out:
            output_dir = base / raw_out

    if not parser.has_section("subjects"):
        raise ManifestError(f"{path}: missing [subjects] section")
    entries = []
    for subject_id, value in parser.items("subjects"):
        entries.append(_parse_subject(subject_id, value, base, path))
    if not entries:
        raise ManifestError(f"{path}: [subjects] section is empty")

    return RunManifest(
        subjects=tuple(entries),
        records_path=records_path,
        threshold=threshold,
        connectivity=connectivity,
        min_component=min_component,
        midline_x=midline_x,
        output_dir=output_dir,
    )


def _parse_subject(subject_id: str, value: str, base: Path, path: Path) -> SubjectEntry:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) < 2:
        raise ManifestError(
            f"{path}: subject {subject_id!r} needs 'cst_path, haematoma_path'")
    midline = None
    for extra in parts[2:]:
        if extra.startswith("midline="):
            try:
                midline = float(extra.split("=", 1)[1])
            except ValueError:
                raise ManifestError(
                    f"{path}: subject {subject_id!r}: bad midline value") from None
        elif extra:
            raise ManifestError(
                f"{path}: subject {subject_id!r}: unknown option {extra!r}")
    cst = (base / parts[0]).resolve()
    haematoma = (base / parts[1]).resolve()
    for p in (cst, haematoma):
        if not p.is_file():
            raise ManifestError(f"{path}: subject {subject_id!r}: {p} not found")
    return SubjectEntry(id=subject_id, cst_path=cst, haematoma_path=haematoma,
                        midline_x=midline)


# --- phantom spec files -------------------------------------------------------

def _parse_numbers(raw: str, count: int, what: str, path: Path,
                   integer: bool = False):
    fields = raw.replace(",", " ").split()
    if len(fields) != count:
        raise ManifestError(f"{path}: {what} needs {count} values, got {raw!r}")
    try:
        return tuple(int(f) if integer else float(f) for f in fields)
    except ValueError:
        raise ManifestError(f"{path}: {what}: bad number in {raw!r}") from None


def parse_phantom_spec(path) -> PhantomSpec:
    """Parse a phantom spec file; omitted keys keep their defaults."""
    path = Path(path)
    parser = _load_ini(path)
    if not parser.has_section("phantom"):
        raise ManifestError(f"{path}: missing [phantom] section")
    section = parser["phantom"]
    defaults = PhantomSpec()

    kwargs = {}
    if "dims" in section:
        kwargs["dims"] = _parse_numbers(section["dims"], 3, "dims", path, integer=True)
    if "voxel_size" in section:
        kwargs["voxel_size"] = _parse_numbers(section["voxel_size"], 3,
                                              "voxel_size", path)
    kwargs["tract_radius_vox"] = _get_float(section, "tract_radius_vox",
                                            defaults.tract_radius_vox, path)
    if "tract_x_offsets" in section:
        kwargs["tract_x_offsets"] = _parse_numbers(section["tract_x_offsets"], 2,
                                                   "tract_x_offsets", path)
    if "tract_z_range" in section:
        kwargs["tract_z_range"] = _parse_numbers(section["tract_z_range"], 2,
                                                 "tract_z_range", path, integer=True)
    if "haematoma_center" in section:
        kwargs["haematoma_center"] = _parse_numbers(section["haematoma_center"], 3,
                                                    "haematoma_center", path)
    if "haematoma_radii" in section:
        kwargs["haematoma_radii"] = _parse_numbers(section["haematoma_radii"], 3,
                                                   "haematoma_radii", path)
    kwargs["jitter_vox"] = _get_float(section, "jitter_vox", defaults.jitter_vox, path)
    kwargs["seed"] = _get_int(section, "seed", defaults.seed, path)
    void_side = section.get("void_side", "").strip()
    if void_side:
        kwargs["void_side"] = void_side

    if parser.has_section("gaps"):
        gaps = parser["gaps"]
        for side in ("left", "right"):
            raw = gaps.get(side, "").strip()
            if raw:
                fields = raw.replace(",", " ").split()
                try:
                    kwargs[f"gap_slices_{side}"] = tuple(int(f) for f in fields)
                except ValueError:
                    raise ManifestError(
                        f"{path}: gaps {side}: bad slice index in {raw!r}") from None
    return PhantomSpec(**kwargs)
