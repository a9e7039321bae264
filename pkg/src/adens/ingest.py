"""Cohort metadata loading, volume I/O wrappers, and synthetic cohort generation.

Metadata arrives as a flat CSV with one row per scan (columns subject_id, age,
cdr, scan_path); rows are grouped into one record per subject. Volumes are
Analyze 7.5 pairs or NIfTI-1 files. Synthetic cohorts carry a class-dependent
dark ellipsoid (an enlarged-ventricle stand-in) so small networks can tell the
classes apart.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from adens.errors import (
    DuplicateScanPath,
    InvalidProportions,
    MalformedRow,
    MissingFile,
)
from adens.labels import (
    NUM_CLASSES,
    VALID_CDR_VALUES,
    ClassLabel,
    cdr_to_class,
    class_to_cdr,
)

logger = logging.getLogger(__name__)

METADATA_COLUMNS = ("subject_id", "age", "cdr", "scan_path")


@dataclass
class SubjectRecord:
    """One subject with all of their scan paths grouped together."""

    subject_id: str
    age: int
    cdr: float | None
    scan_paths: list[str] = field(default_factory=list)

    @property
    def label(self) -> ClassLabel | None:
        return None if self.cdr is None else cdr_to_class(self.cdr)


@dataclass
class MriVolume:
    """A 3-D intensity array plus the provenance needed downstream."""

    voxels: np.ndarray
    subject_id: str
    label: ClassLabel | None = None

    def __post_init__(self) -> None:
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ValueError(f"voxels must be 3-D with positive dims, got {self.voxels.shape}")
        if not np.isfinite(self.voxels).all():
            raise ValueError("voxels contain non-finite intensities")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


def _parse_cdr(text: str, line_no: int) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(line_no, f"cdr {text!r} is not a number") from None
    if value not in VALID_CDR_VALUES:
        raise MalformedRow(line_no, f"cdr {value} not one of {VALID_CDR_VALUES}")
    return value


def _parse_age(text: str, line_no: int) -> int:
    try:
        age = int(text.strip())
    except ValueError:
        raise MalformedRow(line_no, f"age {text!r} is not an integer") from None
    if age < 0:
        raise MalformedRow(line_no, f"age {age} is negative")
    return age


def load_metadata(path: str | Path) -> list[SubjectRecord]:
    """Read the cohort CSV and return one record per subject, scans grouped."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such metadata file: {path}")

    records: dict[str, SubjectRecord] = {}
    seen_paths: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "metadata file is empty, expected a header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in METADATA_COLUMNS if c not in header]
        if missing:
            raise MalformedRow(1, f"header lacks column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in METADATA_COLUMNS}

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(row)}")
            subject_id = row[col["subject_id"]].strip()
            if not subject_id:
                raise MalformedRow(line_no, "empty subject_id")
            age = _parse_age(row[col["age"]], line_no)
            cdr = _parse_cdr(row[col["cdr"]], line_no)
            scan_path = row[col["scan_path"]].strip()
            if not scan_path:
                raise MalformedRow(line_no, "empty scan_path")
            if scan_path in seen_paths:
                raise DuplicateScanPath(
                    f"scan_path {scan_path!r} on line {line_no} already seen on line "
                    f"{seen_paths[scan_path]}"
                )
            seen_paths[scan_path] = line_no

            existing = records.get(subject_id)
            if existing is None:
                records[subject_id] = SubjectRecord(subject_id, age, cdr, [scan_path])
            else:
                if existing.age != age or existing.cdr != cdr:
                    raise MalformedRow(
                        line_no,
                        f"subject {subject_id} has inconsistent age/cdr across rows",
                    )
                existing.scan_paths.append(scan_path)

    logger.info("loaded %d subjects from %s", len(records), path)
    return list(records.values())


def load_volume(
    path: str | Path,
    subject_id: str | None = None,
    label: ClassLabel | None = None,
) -> MriVolume:
    """Read an Analyze pair or NIfTI-1 file into an MriVolume.

    Provenance defaults to the file stem when the caller has no metadata.
    """
    from adens import volume_io

    path = Path(path)
    voxels = volume_io.read_volume_array(path)
    return MriVolume(voxels, subject_id or path.stem, label)


def write_volume(vol: MriVolume, path: str | Path) -> Path:
    """Write `vol` in the format implied by the suffix (.nii or .hdr/.img)."""
    from adens import volume_io

    path = Path(path)
    if path.suffix.lower() == ".nii":
        return volume_io.write_nifti(path, vol.voxels)
    if path.suffix.lower() in (".hdr", ".img"):
        return volume_io.write_analyze(path, vol.voxels)
    from adens.errors import UnsupportedFormat

    raise UnsupportedFormat(f"cannot infer volume format from suffix of {path}")


def class_counts(n_subjects: int, class_proportions) -> list[int]:
    """Round proportional shares to nearest, sending the remainder to class 0."""
    props = np.asarray(class_proportions, dtype=np.float64)
    if props.shape != (NUM_CLASSES,):
        raise InvalidProportions(f"expected {NUM_CLASSES} proportions, got shape {props.shape}")
    if (props < 0).any():
        raise InvalidProportions(f"proportions must be nonnegative, got {props.tolist()}")
    if abs(props.sum() - 1.0) > 1e-9:
        raise InvalidProportions(f"proportions sum to {props.sum()!r}, expected 1")
    counts = [int(np.floor(p * n_subjects + 0.5)) for p in props]
    counts[0] += n_subjects - sum(counts)
    if counts[0] < 0:
        raise InvalidProportions(
            f"rounded counts {counts[1:]} for classes 1..3 exceed n_subjects={n_subjects}"
        )
    return counts


def _synthetic_voxels(
    shape: tuple[int, int, int], label: ClassLabel, rng: np.random.Generator
) -> np.ndarray:
    # Normalized coordinates in [-1, 1] along each axis.
    axes = [np.linspace(-1.0, 1.0, n, dtype=np.float64) for n in shape]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")

    brain = (gx**2 + gy**2 + gz**2) <= 0.9**2
    vox = np.where(brain, 0.8, 0.05)

    # The dark central ellipsoid grows with disease stage; per-subject jitter
    # keeps the classes from being trivially constant.
    base_radius = (0.25, 0.35, 0.45, 0.55)[int(label)]
    radius = base_radius + rng.uniform(-0.02, 0.02)
    center = rng.uniform(-0.05, 0.05, size=3)
    stretch = 1.0 + rng.uniform(-0.1, 0.1, size=3)
    ventricle = (
        ((gx - center[0]) / (radius * stretch[0])) ** 2
        + ((gy - center[1]) / (radius * stretch[1])) ** 2
        + ((gz - center[2]) / (radius * stretch[2])) ** 2
    ) <= 1.0
    vox = np.where(brain & ventricle, 0.15, vox)

    vox = vox + rng.normal(0.0, 0.04, size=shape)
    return vox.astype(np.float32)


def generate_synthetic_cohort(
    n_subjects: int,
    class_proportions,
    shape: tuple[int, int, int],
    seed: int,
) -> list[MriVolume]:
    """Build a deterministic labeled cohort with a separable per-class pattern."""
    if n_subjects < NUM_CLASSES:
        raise InvalidProportions(f"n_subjects={n_subjects} is below the class count")
    counts = class_counts(n_subjects, class_proportions)
    rng = np.random.default_rng(seed)
    cohort: list[MriVolume] = []
    index = 0
    for label in ClassLabel:
        for _ in range(counts[label]):
            subject_id = f"SYN_{index:04d}"
            cohort.append(MriVolume(_synthetic_voxels(shape, label, rng), subject_id, label))
            index += 1
    return cohort


def write_cohort(
    cohort: list[MriVolume], out_dir: str | Path
) -> tuple[Path, list[Path]]:
    """Write a cohort as NIfTI files plus a metadata CSV; returns (csv, volumes)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volume_paths: list[Path] = []
    csv_path = out_dir / "metadata.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METADATA_COLUMNS)
        for vol in cohort:
            vol_path = out_dir / f"{vol.subject_id}.nii"
            write_volume(vol, vol_path)
            volume_paths.append(vol_path)
            cdr = "" if vol.label is None else class_to_cdr(vol.label)
            writer.writerow([vol.subject_id, 70, cdr, str(vol_path)])
    return csv_path, volume_paths
