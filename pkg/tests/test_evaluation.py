import csv
import io
import json

import numpy as np
import pytest
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from adens.errors import EmptyInput, EmptyMatrix
from adens.evaluation import (
    AVG_ROW_NAME,
    CLASS_ROW_NAMES,
    COMPARISON_FOOTNOTE,
    GLCM_BASELINE,
    ConfusionMatrix,
    classification_report,
    confusion_matrix,
    render_tables,
    round_half_up,
    write_summary_json,
)
from adens.labels import ClassLabel


def random_pairs(rng, n):
    draws = rng.integers(0, 4, size=(n, 2))
    return [(ClassLabel(int(t)), ClassLabel(int(p))) for t, p in draws]


class TestConfusionMatrix:
    def test_orientation_true_rows_predicted_columns(self):
        pairs = [
            (ClassLabel.MILD, ClassLabel.NONDEMENTED),
            (ClassLabel.MILD, ClassLabel.NONDEMENTED),
            (ClassLabel.NONDEMENTED, ClassLabel.MODERATE),
        ]
        cm = confusion_matrix(pairs)
        assert cm.counts[2, 0] == 2
        assert cm.counts[0, 3] == 1
        assert cm.total == 3

    def test_empty_pairs(self):
        with pytest.raises(EmptyInput):
            confusion_matrix([])

    def test_shape_and_sign_validated(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.zeros((3, 3), dtype=int))
        with pytest.raises(ValueError):
            ConfusionMatrix(np.full((4, 4), -1))

    def test_reference_pairs_reproduce_reference_matrix(
        self, reference_matrix, reference_pairs
    ):
        rebuilt = confusion_matrix(reference_pairs)
        np.testing.assert_array_equal(rebuilt.counts, reference_matrix.counts)


class TestClassificationReport:
    def test_matches_sklearn_on_random_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            pairs = random_pairs(rng, int(rng.integers(5, 200)))
            y_true = [int(t) for t, _ in pairs]
            y_pred = [int(p) for _, p in pairs]
            report = classification_report(confusion_matrix(pairs))

            p, r, f, s = precision_recall_fscore_support(
                y_true, y_pred, labels=range(4), zero_division=0
            )
            for c in range(4):
                assert report.per_class[c].precision == pytest.approx(p[c], rel=1e-12)
                assert report.per_class[c].recall == pytest.approx(r[c], rel=1e-12)
                assert report.per_class[c].f1 == pytest.approx(f[c], rel=1e-12)
                assert report.per_class[c].support == s[c]

            wp, wr, wf, _ = precision_recall_fscore_support(
                y_true, y_pred, labels=range(4), average="weighted", zero_division=0
            )
            assert report.weighted_avg.precision == pytest.approx(wp, rel=1e-12)
            assert report.weighted_avg.recall == pytest.approx(wr, rel=1e-12)
            assert report.weighted_avg.f1 == pytest.approx(wf, rel=1e-12)
            assert report.accuracy == pytest.approx(accuracy_score(y_true, y_pred))

    def test_zero_division_convention(self):
        # Class 1 is never predicted and never correct; class 3 has no support.
        cm = ConfusionMatrix(np.array([[5, 0, 0, 0], [3, 0, 1, 0], [0, 0, 4, 0], [0, 0, 0, 0]]))
        report = classification_report(cm)
        for c in (1, 3):
            assert report.per_class[c].precision == 0.0
            assert report.per_class[c].recall == 0.0
            assert report.per_class[c].f1 == 0.0

    def test_accuracy_equals_weighted_recall(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            report = classification_report(
                confusion_matrix(random_pairs(rng, int(rng.integers(4, 100))))
            )
            assert report.accuracy == pytest.approx(report.weighted_avg.recall, rel=1e-12)

    def test_recall_times_support_is_the_diagonal(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            cm = confusion_matrix(random_pairs(rng, int(rng.integers(4, 100))))
            report = classification_report(cm)
            for c in range(4):
                hits = report.per_class[c].recall * report.per_class[c].support
                assert hits == pytest.approx(cm.counts[c, c], abs=1e-9)

    def test_relabeling_permutes_per_class_rows(self):
        rng = np.random.default_rng(17)
        pairs = random_pairs(rng, 120)
        base = classification_report(confusion_matrix(pairs))
        perm = [2, 0, 3, 1]
        mapped = [(ClassLabel(perm[int(t)]), ClassLabel(perm[int(p)])) for t, p in pairs]
        moved = classification_report(confusion_matrix(mapped))
        assert moved.accuracy == pytest.approx(base.accuracy, rel=1e-12)
        for c in range(4):
            assert moved.per_class[perm[c]] == base.per_class[c]

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrix):
            classification_report(ConfusionMatrix(np.zeros((4, 4), dtype=int)))


class TestReferenceReport:
    """The published ensemble test-fold table, cell by cell after rounding."""

    def test_per_class_cells(self, reference_matrix):
        report = classification_report(reference_matrix)
        rounded = [
            (
                round_half_up(m.precision),
                round_half_up(m.recall),
                round_half_up(m.f1),
                m.support,
            )
            for m in report.per_class
        ]
        assert rounded == [
            (0.97, 1.00, 0.99, 73),
            (1.00, 0.33, 0.50, 6),
            (0.67, 0.86, 0.75, 7),
            (0.50, 0.50, 0.50, 2),
        ]

    def test_avg_total_row(self, reference_matrix):
        report = classification_report(reference_matrix)
        avg = report.weighted_avg
        assert round_half_up(avg.precision) == 0.94
        assert round_half_up(avg.recall) == 0.93
        assert round_half_up(avg.f1) == 0.92
        assert avg.support == 88

    def test_accuracy_two_decimal_percent(self, reference_matrix):
        report = classification_report(reference_matrix)
        assert abs(round_half_up(report.accuracy * 100) - 93.18) <= 0.005


class TestWeightedAverageRegression:
    """avg/total rows recomputed from the published rounded per-class cells."""

    SUPPORTS = (73, 6, 7, 2)
    ROWS = {
        "densenet121": {
            "precision": ((0.99, 0.75, 0.62, 0.33), 0.93),
            "recall": ((0.99, 0.50, 0.71, 0.50), 0.92),
            "f1": ((0.99, 0.60, 0.67, 0.40), 0.92),
        },
        "densenet161": {
            "precision": ((0.88, 0.00, 0.25, 0.00), 0.75),
            "recall": ((0.95, 0.00, 0.29, 0.00), 0.81),
            "f1": ((0.91, 0.00, 0.27, 0.00), 0.78),
        },
        "densenet169": {
            "precision": ((0.99, 0.50, 0.45, 0.50), 0.90),
            "recall": ((0.96, 0.33, 0.71, 0.50), 0.89),
            "f1": ((0.97, 0.40, 0.56, 0.50), 0.89),
        },
    }

    @pytest.mark.parametrize("model", sorted(ROWS))
    @pytest.mark.parametrize("metric", ["precision", "recall", "f1"])
    def test_member_avg_rows_reconcile_from_rounded_cells(self, model, metric):
        cells, expected = self.ROWS[model][metric]
        weighted = sum(v * s for v, s in zip(cells, self.SUPPORTS)) / sum(self.SUPPORTS)
        assert round_half_up(weighted) == expected

    def test_ensemble_avg_row_needs_full_precision(self, reference_matrix):
        # Weighting the rounded f1 cells drifts one rounding step high
        # (81.52/88 -> 0.93); the published 0.92 only falls out of the
        # full-precision per-class values. This is the drift the rendering
        # footnote warns about.
        rounded_cells = (0.99, 0.50, 0.75, 0.50)
        from_rounded = sum(v * s for v, s in zip(rounded_cells, self.SUPPORTS)) / sum(
            self.SUPPORTS
        )
        assert round_half_up(from_rounded) == 0.93
        avg = classification_report(reference_matrix).weighted_avg
        assert (
            round_half_up(avg.precision),
            round_half_up(avg.recall),
            round_half_up(avg.f1),
        ) == (0.94, 0.93, 0.92)


class TestRoundHalfUp:
    @pytest.mark.parametrize(
        "value,expected",
        [
            (0.005, 0.01),
            (0.125, 0.13),
            (0.665, 0.67),
            (2.675, 2.68),
            (-0.005, -0.01),
            (0.93181818, 0.93),
            (1.0, 1.0),
        ],
    )
    def test_two_decimals(self, value, expected):
        assert round_half_up(value) == expected

    def test_places(self):
        assert round_half_up(93.18181818, 2) == 93.18
        assert round_half_up(0.93185, 4) == 0.9319


class TestRenderTables:
    def perfect_report(self):
        counts = np.diag([10, 5, 3, 2])
        return classification_report(ConfusionMatrix(counts))

    def test_perfect_table_text(self):
        text, _ = render_tables({"ensemble": self.perfect_report()})
        assert "== ensemble ==" in text
        lines = text.splitlines()
        nd_line = next(line for line in lines if line.startswith(CLASS_ROW_NAMES[0]))
        assert "1.00" in nd_line and nd_line.rstrip().endswith("10")
        assert "accuracy: 100.00%" in text

    def test_comparison_block(self, reference_matrix):
        text, _ = render_tables({"ensemble": classification_report(reference_matrix)})
        assert GLCM_BASELINE["model"] in text
        assert "75.71%" in text and "63.84%" in text
        assert "100.00%" in text and "77.92%" in text
        assert "93.18%" in text
        assert COMPARISON_FOOTNOTE in text

    def test_csv_keeps_full_precision(self, reference_matrix):
        report = classification_report(reference_matrix)
        _, csv_text = render_tables({"ensemble": report})
        rows = list(csv.DictReader(io.StringIO(csv_text)))
        assert len(rows) == 5
        avg = next(r for r in rows if r["row"] == AVG_ROW_NAME)
        assert float(avg["precision"]) == report.weighted_avg.precision
        assert float(avg["accuracy"]) == report.accuracy
        mild = next(r for r in rows if r["row"] == "mild")
        assert float(mild["recall"]) == report.per_class[2].recall
        assert int(mild["support"]) == 7

    def test_multiple_reports_in_order(self, reference_matrix):
        report = classification_report(reference_matrix)
        text, _ = render_tables({"densenet121": report, "ensemble": report})
        assert text.index("== densenet121 ==") < text.index("== ensemble ==")

    def test_empty_reports(self):
        with pytest.raises(EmptyInput):
            render_tables({})


def test_summary_json_round_trip(tmp_path, reference_matrix):
    report = classification_report(reference_matrix)
    path = write_summary_json({"ensemble": report}, tmp_path / "summary.json")
    payload = json.loads(path.read_text())
    assert payload["ensemble"]["accuracy"] == report.accuracy
    assert payload["ensemble"]["weighted_avg"]["support"] == 88
    assert payload["ensemble"]["per_class"]["mild"]["recall"] == report.per_class[2].recall
