import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adens.errors import DuplicateSubject, EmptyPool, TooFewSubjects
from adens.labels import ClassLabel
from adens.splits import (
    FoldPlan,
    load_fold_plans,
    save_fold_plans,
    split_train_val,
    stratified_kfold,
)


def cohort(counts: dict[ClassLabel, int]) -> list[tuple[str, ClassLabel]]:
    subjects = []
    for label, n in counts.items():
        subjects.extend((f"{label.name}_{i}", label) for i in range(n))
    return subjects


class TestSplitTrainVal:
    def test_eight_subjects_eighth_ratio(self):
        pool = cohort({ClassLabel.NONDEMENTED: 4, ClassLabel.MILD: 4})
        train, val = split_train_val(pool, 0.125, seed=0)
        assert len(val) == 1
        assert len(train) == 7
        assert train | val == {sid for sid, _ in pool}
        assert not train & val

    def test_class_rounding_to_zero_keeps_class_in_train(self):
        pool = cohort({ClassLabel.NONDEMENTED: 15, ClassLabel.MODERATE: 1})
        train, val = split_train_val(pool, 0.125, seed=1)
        assert len(val) == 2
        assert "MODERATE_0" in train or "MODERATE_0" in val
        # the tiny class cannot claim a seat by largest remainder here
        labels_in_val = {sid.split("_")[0] for sid in val}
        assert labels_in_val == {"NONDEMENTED"}

    def test_eighty_subject_pool_gives_seventy_ten(self):
        pool = cohort(
            {
                ClassLabel.NONDEMENTED: 40,
                ClassLabel.VERY_MILD: 16,
                ClassLabel.MILD: 16,
                ClassLabel.MODERATE: 8,
            }
        )
        train, val = split_train_val(pool, 1 / 8, seed=2)
        assert (len(train), len(val)) == (70, 10)

    def test_empty_pool(self):
        with pytest.raises(EmptyPool):
            split_train_val([], 0.5, seed=0)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            split_train_val(cohort({ClassLabel.MILD: 2}), 1.5, seed=0)

    def test_deterministic(self):
        pool = cohort({ClassLabel.NONDEMENTED: 9, ClassLabel.MILD: 7})
        assert split_train_val(pool, 0.25, seed=3) == split_train_val(pool, 0.25, seed=3)


class TestStratifiedKfold:
    def test_two_balanced_classes_split_exactly(self):
        subjects = cohort({ClassLabel.NONDEMENTED: 5, ClassLabel.MILD: 5})
        plans = stratified_kfold(subjects, k=5, seed=0)
        assert len(plans) == 5
        for plan in plans:
            prefixes = sorted(sid.split("_")[0] for sid in plan.test_ids)
            assert prefixes == ["MILD", "NONDEMENTED"]

    def test_test_sets_partition_cohort(self):
        subjects = cohort(
            {
                ClassLabel.NONDEMENTED: 21,
                ClassLabel.VERY_MILD: 9,
                ClassLabel.MILD: 8,
                ClassLabel.MODERATE: 5,
            }
        )
        plans = stratified_kfold(subjects, k=5, seed=7)
        all_test = [sid for plan in plans for sid in plan.test_ids]
        assert sorted(all_test) == sorted(sid for sid, _ in subjects)

    def test_folds_are_disjoint_and_cover(self):
        subjects = cohort({ClassLabel.NONDEMENTED: 12, ClassLabel.MODERATE: 6})
        for plan in stratified_kfold(subjects, k=3, seed=1):
            assert plan.train_ids | plan.val_ids | plan.test_ids == {
                sid for sid, _ in subjects
            }
            assert not plan.train_ids & plan.val_ids
            assert not plan.train_ids & plan.test_ids
            assert not plan.val_ids & plan.test_ids

    def test_deterministic_for_seed(self):
        subjects = cohort({ClassLabel.NONDEMENTED: 10, ClassLabel.MILD: 10})
        a = stratified_kfold(subjects, k=4, seed=11)
        b = stratified_kfold(subjects, k=4, seed=11)
        for pa, pb in zip(a, b):
            assert (pa.train_ids, pa.val_ids, pa.test_ids) == (
                pb.train_ids,
                pb.val_ids,
                pb.test_ids,
            )

    def test_different_seed_changes_plan(self):
        subjects = cohort({ClassLabel.NONDEMENTED: 10, ClassLabel.MILD: 10})
        a = stratified_kfold(subjects, k=4, seed=1)
        b = stratified_kfold(subjects, k=4, seed=2)
        assert any(pa.test_ids != pb.test_ids for pa, pb in zip(a, b))

    def test_duplicate_subject(self):
        subjects = [("S1", ClassLabel.MILD), ("S1", ClassLabel.MILD)]
        with pytest.raises(DuplicateSubject):
            stratified_kfold(subjects, k=2, seed=0)

    def test_too_few_subjects(self):
        with pytest.raises(TooFewSubjects):
            stratified_kfold(cohort({ClassLabel.MILD: 3}), k=5, seed=0)

    def test_rare_class_warns_but_splits(self, caplog):
        subjects = cohort({ClassLabel.NONDEMENTED: 10, ClassLabel.MODERATE: 2})
        with caplog.at_level("WARNING"):
            plans = stratified_kfold(subjects, k=5, seed=0)
        assert len(plans) == 5
        assert any("MODERATE" in message for message in caplog.messages)

    @given(
        st.integers(0, 2**31 - 1),
        st.tuples(
            st.integers(6, 40), st.integers(2, 20), st.integers(2, 15), st.integers(2, 10)
        ),
    )
    @settings(max_examples=25, deadline=None)
    def test_per_class_stratification_within_one(self, seed, sizes):
        k = 4
        subjects = cohort(dict(zip(ClassLabel, sizes)))
        for plan in stratified_kfold(subjects, k=k, seed=seed):
            for label, size in zip(ClassLabel, sizes):
                in_test = sum(1 for sid in plan.test_ids if sid.startswith(label.name))
                assert abs(in_test - size / k) <= 1


def test_fold_plan_rejects_overlap():
    with pytest.raises(ValueError):
        FoldPlan(0, {"a"}, {"a"}, {"b"})


def test_fold_plan_rejects_empty_test():
    with pytest.raises(ValueError):
        FoldPlan(0, {"a"}, {"b"}, set())


def test_json_round_trip(tmp_path):
    subjects = cohort({ClassLabel.NONDEMENTED: 8, ClassLabel.MILD: 8})
    plans = stratified_kfold(subjects, k=4, seed=5)
    path = save_fold_plans(plans, tmp_path / "folds.json")
    loaded = load_fold_plans(path)
    for original, restored in zip(plans, loaded):
        assert original.fold_index == restored.fold_index
        assert original.train_ids == restored.train_ids
        assert original.val_ids == restored.val_ids
        assert original.test_ids == restored.test_ids


def test_saved_plans_are_byte_deterministic(tmp_path):
    subjects = cohort({ClassLabel.NONDEMENTED: 8, ClassLabel.MILD: 8})
    p1 = save_fold_plans(stratified_kfold(subjects, 4, 5), tmp_path / "a.json")
    p2 = save_fold_plans(stratified_kfold(subjects, 4, 5), tmp_path / "b.json")
    assert p1.read_bytes() == p2.read_bytes()
