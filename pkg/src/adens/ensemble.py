"""Per-patch prediction records, three-model majority voting, and
patch-to-subject aggregation.

Votes are hard labels. A two-of-three agreement wins outright; only an
all-distinct triple falls back to the mean posterior, so the posterior never
overrides an actual majority.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from adens.errors import (
    EmptyVotes,
    MixedProvenance,
    MixedSubjects,
    ShapeMismatch,
    WrongArity,
)
from adens.labels import NUM_CLASSES, ClassLabel
from adens.models import ModelHandle
from adens.preprocess import Plane
from adens.training import PROB_FLOOR, softmax

ENSEMBLE_SIZE = 3

PREDICTION_COLUMNS = (
    "model_id",
    "subject_id",
    "plane",
    "slice_index",
    "p0",
    "p1",
    "p2",
    "p3",
    "predicted",
)


@dataclass
class PredictionRecord:
    model_id: str
    subject_id: str
    plane: Plane
    slice_index: int
    logits: np.ndarray
    posteriors: np.ndarray
    predicted: ClassLabel

    def key(self) -> tuple[str, str, int]:
        return (self.subject_id, self.plane.value, self.slice_index)


def make_record(
    model_id: str,
    subject_id: str,
    plane: Plane,
    slice_index: int,
    logits,
) -> PredictionRecord:
    """Build a record whose posteriors and predicted label follow the logits."""
    logits = np.asarray(logits, dtype=np.float64).reshape(NUM_CLASSES)
    posteriors = softmax(logits)
    predicted = ClassLabel(int(np.argmax(posteriors)))
    return PredictionRecord(
        model_id, subject_id, plane, slice_index, logits, posteriors, predicted
    )


def predict_record(
    model: ModelHandle,
    network_input: np.ndarray,
    model_id: str,
    subject_id: str,
    plane: Plane,
    slice_index: int,
) -> PredictionRecord:
    """Run one (3, side, side) input through the model and wrap the result."""
    network_input = np.asarray(network_input, dtype=np.float32)
    if network_input.ndim != 3 or network_input.shape[0] != 3:
        raise ShapeMismatch(
            f"expected a (3, side, side) input, got shape {network_input.shape}"
        )
    model.network.eval()
    with torch.no_grad():
        logits = model.network(torch.from_numpy(network_input).unsqueeze(0))
    return make_record(
        model_id, subject_id, plane, slice_index, logits.squeeze(0).numpy()
    )


def majority_vote(records: list[PredictionRecord]) -> ClassLabel:
    """Majority of three hard votes; all-distinct triples fall back to the
    highest mean posterior, lowest class index on exact ties."""
    if len(records) != ENSEMBLE_SIZE:
        raise WrongArity(f"expected {ENSEMBLE_SIZE} records, got {len(records)}")
    keys = {r.key() for r in records}
    if len(keys) != 1:
        raise MixedProvenance(f"records describe different inputs: {sorted(keys)}")
    model_ids = {r.model_id for r in records}
    if len(model_ids) != ENSEMBLE_SIZE:
        raise MixedProvenance(f"records must come from distinct models, got {model_ids}")

    counts = np.bincount([int(r.predicted) for r in records], minlength=NUM_CLASSES)
    top = int(counts.max())
    if top >= 2:
        return ClassLabel(int(np.argmax(counts)))
    mean_posterior = np.mean([r.posteriors for r in records], axis=0)
    return ClassLabel(int(np.argmax(mean_posterior)))


def _subject_of(provenance) -> str:
    return provenance if isinstance(provenance, str) else provenance.subject_id


def aggregate_subject(votes: list[tuple[object, ClassLabel]]) -> ClassLabel:
    """Plurality over patch votes; ties go to the more severe (higher) class."""
    if not votes:
        raise EmptyVotes("no votes to aggregate")
    subjects = {_subject_of(prov) for prov, _ in votes}
    if len(subjects) != 1:
        raise MixedSubjects(f"votes span subjects {sorted(subjects)}")
    counts = np.bincount([int(label) for _, label in votes], minlength=NUM_CLASSES)
    top = counts.max()
    return ClassLabel(int(np.max(np.flatnonzero(counts == top))))


def write_predictions(records: list[PredictionRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.model_id,
                    r.subject_id,
                    r.plane.value,
                    r.slice_index,
                    *(repr(float(p)) for p in r.posteriors),
                    int(r.predicted),
                ]
            )
    return path


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    """Read records back; logits are recovered as log-posteriors, which map to
    the stored posteriors under softmax (up to the probability floor)."""
    records: list[PredictionRecord] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            posteriors = np.array(
                [float(row[f"p{i}"]) for i in range(NUM_CLASSES)], dtype=np.float64
            )
            logits = np.log(np.maximum(posteriors, PROB_FLOOR))
            records.append(
                PredictionRecord(
                    row["model_id"],
                    row["subject_id"],
                    Plane(row["plane"]),
                    int(row["slice_index"]),
                    logits,
                    softmax(logits),
                    ClassLabel(int(row["predicted"])),
                )
            )
    return records


def vote_over_models(records: list[PredictionRecord]) -> dict[tuple[str, str, int], ClassLabel]:
    """Group records by input and majority-vote each group of three."""
    groups: dict[tuple[str, str, int], list[PredictionRecord]] = {}
    for r in records:
        groups.setdefault(r.key(), []).append(r)
    return {key: majority_vote(group) for key, group in sorted(groups.items())}
