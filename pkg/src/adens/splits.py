"""Stratified k-fold plans with a 7:1 train/validation split of each non-test pool.

Each fold's test set is one of k stratified buckets; the remaining subjects
are split per class so that with k=5 the overall proportions land on
70/10/20. All randomness flows from a single integer seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from adens.errors import DuplicateSubject, EmptyPool, TooFewSubjects
from adens.labels import ClassLabel

logger = logging.getLogger(__name__)

VAL_RATIO_OF_POOL = 1.0 / 8.0


@dataclass
class FoldPlan:
    fold_index: int
    train_ids: set[str] = field(default_factory=set)
    val_ids: set[str] = field(default_factory=set)
    test_ids: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.train_ids & self.val_ids or self.train_ids & self.test_ids or (
            self.val_ids & self.test_ids
        ):
            raise ValueError(f"fold {self.fold_index} has overlapping id sets")
        if not self.test_ids:
            raise ValueError(f"fold {self.fold_index} has an empty test set")

    def all_ids(self) -> set[str]:
        return self.train_ids | self.val_ids | self.test_ids


def _group_by_class(subjects: list[tuple[str, ClassLabel]]) -> dict[int, list[str]]:
    seen: set[str] = set()
    groups: dict[int, list[str]] = {}
    for subject_id, label in subjects:
        if subject_id in seen:
            raise DuplicateSubject(f"subject {subject_id!r} listed twice")
        seen.add(subject_id)
        groups.setdefault(int(label), []).append(subject_id)
    return groups


def split_train_val(
    pool: list[tuple[str, ClassLabel]], ratio: float, seed: int
) -> tuple[set[str], set[str]]:
    """Split `pool` into (train_ids, val_ids) with |val| = round(ratio * |pool|).

    The validation quota is apportioned per class by largest remainder, so the
    split stays stratified even when class shares do not divide evenly.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if not pool:
        raise EmptyPool("cannot split an empty pool")
    groups = _group_by_class(pool)
    n_val = int(np.floor(ratio * len(pool) + 0.5))

    quotas = {c: ratio * len(members) for c, members in groups.items()}
    base = {c: min(int(np.floor(q)), len(groups[c])) for c, q in quotas.items()}
    remaining = n_val - sum(base.values())
    # Hand out the leftover seats by largest fractional remainder; prefer the
    # bigger class, then the lower class index, so the order is total.
    order = sorted(
        groups,
        key=lambda c: (-(quotas[c] - int(np.floor(quotas[c]))), -len(groups[c]), c),
    )
    take = dict(base)
    idx = 0
    while remaining > 0 and any(take[c] < len(groups[c]) for c in groups):
        c = order[idx % len(order)]
        idx += 1
        if take[c] < len(groups[c]):
            take[c] += 1
            remaining -= 1

    rng = np.random.default_rng(seed)
    val_ids: set[str] = set()
    for c in sorted(groups):
        members = sorted(groups[c])
        rng.shuffle(members)
        val_ids.update(members[: take[c]])
    train_ids = {sid for sid, _ in pool} - val_ids
    return train_ids, val_ids


def stratified_kfold(
    subjects: list[tuple[str, ClassLabel]], k: int, seed: int
) -> list[FoldPlan]:
    """Produce k plans whose test sets partition the cohort, stratified per class."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    groups = _group_by_class(subjects)
    if len(subjects) < k:
        raise TooFewSubjects(f"{len(subjects)} subjects cannot fill {k} test sets")
    for c in sorted(groups):
        members = groups[c]
        if len(members) < k:
            logger.warning(
                "class %s has %d subjects for k=%d; some test sets will miss it",
                ClassLabel(c).name,
                len(members),
                k,
            )

    root = np.random.SeedSequence(seed)
    children = root.spawn(k + 1)
    rng = np.random.default_rng(children[0])

    # Deal each class round-robin into k buckets. The running offset keeps the
    # remainders of successive classes from all landing in bucket 0, so bucket
    # sizes stay within one of each other too.
    buckets: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for c in sorted(groups):
        members = sorted(groups[c])
        rng.shuffle(members)
        for i, sid in enumerate(members):
            buckets[(i + offset) % k].append(sid)
        offset = (offset + len(members)) % k

    labels = {sid: label for sid, label in subjects}
    plans: list[FoldPlan] = []
    for fold in range(k):
        test_ids = set(buckets[fold])
        pool = [(sid, labels[sid]) for sid, _ in subjects if sid not in test_ids]
        fold_seed = int(children[fold + 1].generate_state(1)[0])
        train_ids, val_ids = split_train_val(pool, VAL_RATIO_OF_POOL, fold_seed)
        plans.append(FoldPlan(fold, train_ids, val_ids, test_ids))
    return plans


def save_fold_plans(plans: list[FoldPlan], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [
        {
            "fold_index": p.fold_index,
            "train_ids": sorted(p.train_ids),
            "val_ids": sorted(p.val_ids),
            "test_ids": sorted(p.test_ids),
        }
        for p in plans
    ]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_fold_plans(path: str | Path) -> list[FoldPlan]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        FoldPlan(
            entry["fold_index"],
            set(entry["train_ids"]),
            set(entry["val_ids"]),
            set(entry["test_ids"]),
        )
        for entry in payload
    ]
