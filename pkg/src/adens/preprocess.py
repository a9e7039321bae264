"""Slice 3-D volumes into plane patches and normalize them for the backbones.

A "patch" is a whole 2-D slice from one of the three anatomical planes. The
default pipeline keeps a centered window of slices per plane, min-max
normalizes each patch, resizes to the backbone's input side, and replicates
the single channel three times before ImageNet standardization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np

from adens.errors import EmptyInput, NonFiniteInput
from adens.ingest import MriVolume
from adens.labels import ClassLabel

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_WINDOW = 16
DEFAULT_SIDE = 224


class Plane(Enum):
    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"


@dataclass
class PlanePatch:
    """One 2-D slice with enough provenance to trace it back to its subject."""

    pixels: np.ndarray
    plane: Plane
    slice_index: int
    subject_id: str
    label: ClassLabel | None


def extract_plane_slices(vol: MriVolume, plane: Plane) -> list[PlanePatch]:
    """Slice `vol` along the plane's normal axis, slice_index ascending.

    For shape (X, Y, Z): SAGITTAL gives X slices of (Y, Z), CORONAL gives Y
    slices of (X, Z), AXIAL gives Z slices of (X, Y).
    """
    axis = {Plane.SAGITTAL: 0, Plane.CORONAL: 1, Plane.AXIAL: 2}[plane]
    count = vol.voxels.shape[axis]
    patches = []
    for k in range(count):
        pixels = np.take(vol.voxels, k, axis=axis)
        patches.append(PlanePatch(pixels, plane, k, vol.subject_id, vol.label))
    return patches


def select_patches(slices: list[PlanePatch], window: int) -> list[PlanePatch]:
    """Keep the `window` slices centered on the list midpoint; clamp to all."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not slices:
        raise EmptyInput("no slices to select from")
    n = len(slices)
    if window >= n:
        return list(slices)
    start = (n - window) // 2
    return slices[start : start + window]


def to_network_input(patch: PlanePatch, side: int = DEFAULT_SIDE) -> np.ndarray:
    """Normalize, resize, and standardize one patch into a (3, side, side) array."""
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    pixels = np.asarray(patch.pixels, dtype=np.float32)
    if not np.isfinite(pixels).all():
        raise NonFiniteInput(
            f"patch {patch.subject_id}/{patch.plane.value}/{patch.slice_index} "
            "has non-finite pixels"
        )
    lo = float(pixels.min())
    hi = float(pixels.max())
    if hi > lo:
        pixels = (pixels - lo) / (hi - lo)
    else:
        pixels = np.zeros_like(pixels)
    if pixels.shape != (side, side):
        pixels = cv2.resize(pixels, (side, side), interpolation=cv2.INTER_LINEAR)
        pixels = np.clip(pixels, 0.0, 1.0)

    image = np.repeat(pixels[np.newaxis, :, :], 3, axis=0)
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(IMAGENET_STD, dtype=np.float32).reshape(3, 1, 1)
    return (image - mean) / std


def preprocess_volume(
    vol: MriVolume, window: int = DEFAULT_WINDOW, side: int = DEFAULT_SIDE
) -> tuple[np.ndarray, list[PlanePatch]]:
    """Run all three planes of one volume through the patch pipeline.

    Returns a stacked (N, 3, side, side) float32 array and the source patches
    in the same order, ordered by (plane, slice_index).
    """
    selected: list[PlanePatch] = []
    for plane in Plane:
        selected.extend(select_patches(extract_plane_slices(vol, plane), window))
    inputs = np.stack([to_network_input(p, side) for p in selected]).astype(np.float32)
    return inputs, selected


# --- on-disk patch cache -------------------------------------------------
#
# One compressed .npz per subject holding the stacked network inputs plus
# parallel metadata arrays, and a cohort-level manifest CSV with one row per
# patch: subject_id, plane, slice_index, label.

MANIFEST_NAME = "patches.csv"


def subject_cache_path(cache_dir: str | Path, subject_id: str) -> Path:
    return Path(cache_dir) / f"{subject_id}.npz"


def write_subject_cache(
    cache_dir: str | Path, subject_id: str, inputs: np.ndarray, patches: list[PlanePatch]
) -> Path:
    path = subject_cache_path(cache_dir, subject_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path,
        inputs=inputs.astype(np.float32),
        planes=np.array([p.plane.value for p in patches]),
        slice_indices=np.array([p.slice_index for p in patches], dtype=np.int64),
        labels=np.array(
            [-1 if p.label is None else int(p.label) for p in patches], dtype=np.int64
        ),
    )
    return path


def read_subject_cache(path: str | Path) -> tuple[np.ndarray, list[dict]]:
    with np.load(path, allow_pickle=False) as data:
        inputs = data["inputs"]
        meta = [
            {
                "plane": Plane(str(plane)),
                "slice_index": int(idx),
                "label": None if label < 0 else ClassLabel(int(label)),
            }
            for plane, idx, label in zip(
                data["planes"], data["slice_indices"], data["labels"]
            )
        ]
    return inputs, meta


def write_patch_manifest(cache_dir: str | Path, rows: list[dict]) -> Path:
    path = Path(cache_dir) / MANIFEST_NAME
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "plane", "slice_index", "label"])
        for row in rows:
            label = row["label"]
            writer.writerow(
                [
                    row["subject_id"],
                    row["plane"].value,
                    row["slice_index"],
                    "" if label is None else int(label),
                ]
            )
    return path


def read_patch_manifest(cache_dir: str | Path) -> list[dict]:
    path = Path(cache_dir) / MANIFEST_NAME
    rows: list[dict] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                {
                    "subject_id": record["subject_id"],
                    "plane": Plane(record["plane"]),
                    "slice_index": int(record["slice_index"]),
                    "label": ClassLabel(int(record["label"])) if record["label"] else None,
                }
            )
    return rows


class PatchSource:
    """Reads cached patches per subject and logs every access.

    The access log (purpose, subject_id) lets the pipeline prove after the
    fact that training never touched validation or test subjects.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.access_log: list[tuple[str, str]] = []
        self._manifest = read_patch_manifest(self.cache_dir)

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for row in self._manifest:
            seen.setdefault(row["subject_id"], None)
        return list(seen)

    def subject_label(self, subject_id: str) -> ClassLabel | None:
        for row in self._manifest:
            if row["subject_id"] == subject_id:
                return row["label"]
        raise KeyError(subject_id)

    def load(self, subject_id: str, purpose: str) -> tuple[np.ndarray, np.ndarray, list[dict]]:
        """Return (inputs, labels, meta) for one subject, recording the access."""
        self.access_log.append((purpose, subject_id))
        inputs, meta = read_subject_cache(subject_cache_path(self.cache_dir, subject_id))
        labels = np.array(
            [-1 if m["label"] is None else int(m["label"]) for m in meta], dtype=np.int64
        )
        return inputs, labels, meta
