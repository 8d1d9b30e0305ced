"""Confusion matrix and the per-class precision/recall/F1 report."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import CLASS_LABELS, NUM_CLASSES, DrClass
from .errors import DataError, ShapeError


class ConfusionMatrix:
    """5x5 count matrix, rows are true labels, columns predicted labels."""

    def __init__(self, counts=None):
        if counts is None:
            counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ShapeError(f"confusion matrix must be 5x5, got {counts.shape}")
        if (counts < 0).any():
            raise ShapeError("confusion matrix counts must be non-negative")
        self.counts = counts

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ShapeError(f"label arrays differ: {y_true.shape} vs {y_pred.shape}")
        counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([CLASS_LABELS[DrClass(i)] for i in range(NUM_CLASSES)])
            for row in self.counts:
                writer.writerow([int(v) for v in row])

    @classmethod
    def read_csv(cls, path) -> "ConfusionMatrix":
        path = Path(path)
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise DataError(f"cannot read confusion matrix {path}: {exc}") from exc
        if len(rows) != NUM_CLASSES + 1:
            raise DataError(f"{path}: expected header plus {NUM_CLASSES} rows")
        try:
            counts = np.array([[int(v) for v in row] for row in rows[1:]], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"{path}: non-integer matrix entry") from exc
        return cls(counts)


@dataclass
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float

    def as_text(self) -> str:
        width = max(len(CLASS_LABELS[DrClass(i)]) for i in range(NUM_CLASSES))
        lines = [f"{'Class':<{width}}  Precision  Recall  F1-score  Support"]
        for i in range(NUM_CLASSES):
            lines.append(
                f"{CLASS_LABELS[DrClass(i)]:<{width}}  "
                f"{self.precision[i]:>9.3f}  {self.recall[i]:>6.3f}  "
                f"{self.f1[i]:>8.3f}  {int(self.support[i]):>7d}"
            )
        lines.append(f"{'accuracy':<{width}}  {'':>9}  {'':>6}  "
                     f"{self.accuracy:>8.3f}  {int(self.support.sum()):>7d}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "precision", "recall", "f1", "support"])
            for i in range(NUM_CLASSES):
                writer.writerow([
                    CLASS_LABELS[DrClass(i)],
                    repr(float(self.precision[i])),
                    repr(float(self.recall[i])),
                    repr(float(self.f1[i])),
                    int(self.support[i]),
                ])
            writer.writerow(["accuracy", "", "", repr(float(self.accuracy)),
                             int(self.support.sum())])


def classification_report(cm: ConfusionMatrix) -> ClassReport:
    """One-vs-rest precision/recall/F1 per class; zero when a denominator is
    zero; accuracy = trace / total."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise DataError("classification_report: all-zero confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp

    def safe_div(num, den):
        out = np.zeros_like(num, dtype=np.float64)
        nz = den > 0
        out[nz] = num[nz] / den[nz]
        return out

    precision = safe_div(tp, tp + fp)
    recall = safe_div(tp, tp + fn)
    f1 = safe_div(2 * precision * recall, precision + recall)
    accuracy = float(tp.sum() / total)
    return ClassReport(precision, recall, f1, counts.sum(axis=1), accuracy)
