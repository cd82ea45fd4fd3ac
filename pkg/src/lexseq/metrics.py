"""Confusion matrix and precision/recall/F1 with macro and
support-weighted aggregation.

Rows of the matrix are true classes, columns are predicted classes.
Any 0/0 ratio (empty column, empty row, P+R = 0) is defined as 0 so
aggregates stay well defined for absent classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64

    def __post_init__(self):
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("confusion matrix entries must be non-negative")

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def supports(self) -> np.ndarray:
        """True-instance count per class (row sums)."""
        return self.counts.sum(axis=1)

    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0


def confusion(pairs: list[tuple[int, int]], classes: int) -> ConfusionMatrix:
    counts = np.zeros((classes, classes), dtype=np.int64)
    for true_cls, pred_cls in pairs:
        if not (0 <= true_cls < classes and 0 <= pred_cls < classes):
            raise ValueError(
                f"pair ({true_cls}, {pred_cls}) out of range for {classes} classes"
            )
        counts[true_cls, pred_cls] += 1
    return ConfusionMatrix(counts)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, 0 when both inputs are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_class_metrics(m: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, f1) arrays over classes."""
    counts = m.counts.astype(np.float64)
    diag = np.diag(counts)
    col_sums = counts.sum(axis=0)
    row_sums = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col_sums > 0, diag / col_sums, 0.0)
        recall = np.where(row_sums > 0, diag / row_sums, 0.0)
    f1 = np.array([f1_score(p, r) for p, r in zip(precision, recall)])
    return precision, recall, f1


def aggregate(
    per_class: tuple[np.ndarray, np.ndarray, np.ndarray],
    supports: np.ndarray,
    mode: str,
) -> tuple[float, float, float]:
    """Average (precision, recall, f1) columns, unweighted or by support."""
    precision, recall, f1 = (np.asarray(v, dtype=np.float64) for v in per_class)
    supports = np.asarray(supports)
    if supports.shape != precision.shape:
        raise ValueError("supports length must equal the class count")
    if mode == "macro":
        return float(precision.mean()), float(recall.mean()), float(f1.mean())
    if mode == "weighted":
        total = float(supports.sum())
        if total <= 0:
            raise ValueError("weighted aggregation requires positive total support")
        w = supports / total
        return (
            float(np.dot(precision, w)),
            float(np.dot(recall, w)),
            float(np.dot(f1, w)),
        )
    raise ValueError(f"unknown aggregation mode {mode!r}")


@dataclass(frozen=True)
class EvaluationReport:
    matrix: ConfusionMatrix
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    supports: np.ndarray
    macro: tuple[float, float, float]
    weighted: tuple[float, float, float]
    accuracy: float
    labels: tuple[str, ...] | None = None

    def label_names(self) -> tuple[str, ...]:
        if self.labels is not None:
            return self.labels
        return tuple(str(i) for i in range(self.matrix.classes))

    def to_dict(self) -> dict:
        names = self.label_names()
        return {
            "total": self.matrix.total,
            "accuracy": self.accuracy,
            "labels": list(names),
            "matrix": self.matrix.counts.tolist(),
            "per_class": [
                {
                    "label": names[c],
                    "precision": float(self.precision[c]),
                    "recall": float(self.recall[c]),
                    "f1": float(self.f1[c]),
                    "support": int(self.supports[c]),
                }
                for c in range(self.matrix.classes)
            ],
            "macro": dict(zip(("precision", "recall", "f1"), self.macro)),
            "weighted": dict(zip(("precision", "recall", "f1"), self.weighted)),
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )

    def matrix_csv(self) -> str:
        """CSV rendering: header row of predicted labels, one row per true label."""
        names = self.label_names()
        lines = ["," + ",".join(names)]
        for c in range(self.matrix.classes):
            row = ",".join(str(int(v)) for v in self.matrix.counts[c])
            lines.append(f"{names[c]},{row}")
        return "\n".join(lines) + "\n"

    def save_matrix_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.matrix_csv(), encoding="utf-8")


def evaluation_report(
    pairs: list[tuple[int, int]],
    classes: int,
    labels: tuple[str, ...] | None = None,
) -> EvaluationReport:
    """Build the full report from (true, predicted) pairs."""
    matrix = confusion(pairs, classes)
    per_class = per_class_metrics(matrix)
    supports = matrix.supports()
    return EvaluationReport(
        matrix=matrix,
        precision=per_class[0],
        recall=per_class[1],
        f1=per_class[2],
        supports=supports,
        macro=aggregate(per_class, supports, "macro"),
        weighted=aggregate(per_class, supports, "weighted")
        if supports.sum() > 0
        else (0.0, 0.0, 0.0),
        accuracy=matrix.accuracy(),
        labels=labels,
    )
