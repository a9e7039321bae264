"""Confusion matrices, per-class metric reports, and table rendering.

Zero-denominator metrics are 0 by convention. Weighted averages are
support-weighted means; display rounding is half-up to two decimals while CSV
and JSON outputs keep full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from adens.errors import EmptyInput, EmptyMatrix
from adens.labels import NUM_CLASSES, ClassLabel

CLASS_ROW_NAMES = ("non-demented", "very mild", "mild", "moderate")
AVG_ROW_NAME = "avg/total"

# Static texture-features baseline used in the comparison table:
# accuracy, weighted precision, weighted recall, weighted f1 (percent).
GLCM_BASELINE = {
    "model": "GLCM texture baseline",
    "accuracy": 75.71,
    "precision": 63.84,
    "recall": 100.0,
    "f1": 77.92,
}

COMPARISON_FOOTNOTE = (
    "Note: weighted metrics are support-weighted means. Display values are "
    "rounded half-up to two decimals; reference reports round the same "
    "quantities to different widths in different places (e.g. precision 0.94 "
    "vs 0.93), so comparisons should use the full-precision CSV/JSON output."
)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"expected a {NUM_CLASSES}x{NUM_CLASSES} matrix")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    weighted_avg: ClassMetrics
    accuracy: float


def confusion_matrix(pairs: list[tuple[ClassLabel, ClassLabel]]) -> ConfusionMatrix:
    """counts[t][p] = number of (true=t, predicted=p) pairs."""
    if not pairs:
        raise EmptyInput("cannot build a confusion matrix from no pairs")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for true, predicted in pairs:
        counts[int(true), int(predicted)] += 1
    return ConfusionMatrix(counts)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def classification_report(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    if counts.sum() == 0:
        raise EmptyMatrix("confusion matrix has no entries")
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)
    per_class: list[ClassMetrics] = []
    for c in range(NUM_CLASSES):
        tp = float(counts[c, c])
        precision = _safe_div(tp, float(col_sums[c]))
        recall = _safe_div(tp, float(row_sums[c]))
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(precision, recall, f1, int(row_sums[c])))

    total = cm.total
    weighted = ClassMetrics(
        sum(m.precision * m.support for m in per_class) / total,
        sum(m.recall * m.support for m in per_class) / total,
        sum(m.f1 * m.support for m in per_class) / total,
        total,
    )
    accuracy = float(np.trace(counts)) / total
    return MetricsReport(per_class, weighted, accuracy)


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _table_lines(name: str, report: MetricsReport) -> list[str]:
    lines = [f"== {name} ==", f"{'':<14}{'precision':>10}{'recall':>10}{'f1-score':>10}{'support':>10}"]
    for row_name, metrics in zip(CLASS_ROW_NAMES, report.per_class):
        lines.append(
            f"{row_name:<14}"
            f"{round_half_up(metrics.precision):>10.2f}"
            f"{round_half_up(metrics.recall):>10.2f}"
            f"{round_half_up(metrics.f1):>10.2f}"
            f"{metrics.support:>10d}"
        )
    avg = report.weighted_avg
    lines.append(
        f"{AVG_ROW_NAME:<14}"
        f"{round_half_up(avg.precision):>10.2f}"
        f"{round_half_up(avg.recall):>10.2f}"
        f"{round_half_up(avg.f1):>10.2f}"
        f"{avg.support:>10d}"
    )
    lines.append(f"accuracy: {round_half_up(report.accuracy * 100):.2f}%")
    lines.append("")
    return lines


def render_tables(reports: dict[str, MetricsReport]) -> tuple[str, str]:
    """Render per-model metric tables plus the baseline comparison.

    Returns (plain text, CSV text); the CSV keeps full precision.
    """
    if not reports:
        raise EmptyInput("no reports to render")
    text_lines: list[str] = []
    csv_lines = ["model,row,precision,recall,f1,support,accuracy"]
    for name, report in reports.items():
        text_lines.extend(_table_lines(name, report))
        for row_name, m in zip(CLASS_ROW_NAMES, report.per_class):
            csv_lines.append(
                f"{name},{row_name},{m.precision!r},{m.recall!r},{m.f1!r},{m.support},"
            )
        avg = report.weighted_avg
        csv_lines.append(
            f"{name},{AVG_ROW_NAME},{avg.precision!r},{avg.recall!r},{avg.f1!r},"
            f"{avg.support},{report.accuracy!r}"
        )

    text_lines.append("== comparison ==")
    header = f"{'model':<28}{'accuracy':>10}{'precision':>11}{'recall':>10}{'f1-score':>10}"
    text_lines.append(header)
    for name, report in reports.items():
        text_lines.append(
            f"{name:<28}"
            f"{round_half_up(report.accuracy * 100):>9.2f}%"
            f"{round_half_up(report.weighted_avg.precision * 100):>10.2f}%"
            f"{round_half_up(report.weighted_avg.recall * 100):>9.2f}%"
            f"{round_half_up(report.weighted_avg.f1 * 100):>9.2f}%"
        )
    text_lines.append(
        f"{GLCM_BASELINE['model']:<28}"
        f"{GLCM_BASELINE['accuracy']:>9.2f}%"
        f"{GLCM_BASELINE['precision']:>10.2f}%"
        f"{GLCM_BASELINE['recall']:>9.2f}%"
        f"{GLCM_BASELINE['f1']:>9.2f}%"
    )
    text_lines.append("")
    text_lines.append(COMPARISON_FOOTNOTE)
    text_lines.append("")
    return "\n".join(text_lines), "\n".join(csv_lines) + "\n"


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "per_class": {
            CLASS_ROW_NAMES[i]: {
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
            }
            for i, m in enumerate(report.per_class)
        },
        "weighted_avg": {
            "precision": report.weighted_avg.precision,
            "recall": report.weighted_avg.recall,
            "f1": report.weighted_avg.f1,
            "support": report.weighted_avg.support,
        },
    }


def write_summary_json(reports: dict[str, MetricsReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: report_to_dict(report) for name, report in reports.items()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
