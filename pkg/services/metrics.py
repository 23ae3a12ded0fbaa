"""
Metrics Service - Accuracy, per-class precision/recall/F1, macro F1, confusion matrix

Undefined ratios (0/0) score 0. Macro F1 averages over every class in
``range(num_classes)``, including classes absent from both vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from services.errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    per_class: list[ClassScores]
    macro_f1: float
    confusion: ConfusionMatrix

    def to_dict(self, label_names: list[str] | None = None) -> dict:
        names = label_names or [str(c) for c in range(len(self.per_class))]
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                name: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                for name, s in zip(names, self.per_class)
            },
            "confusion": self.confusion.to_list(),
            "labels": names,
        }

    def to_text(self, label_names: list[str] | None = None) -> str:
        """Flat ``key = value`` lines, one score per line."""
        names = label_names or [str(c) for c in range(len(self.per_class))]
        lines = [
            f"accuracy = {self.accuracy:.4f}",
            f"macro_f1 = {self.macro_f1:.4f}",
        ]
        for name, s in zip(names, self.per_class):
            lines.append(f"{name}.precision = {s.precision:.4f}")
            lines.append(f"{name}.recall = {s.recall:.4f}")
            lines.append(f"{name}.f1 = {s.f1:.4f}")
        for name, row in zip(names, self.confusion.to_list()):
            lines.append(f"confusion.{name} = {' '.join(str(v) for v in row)}")
        return "\n".join(lines)


def _check_inputs(y_true, y_pred, num_classes: int):
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise DataError(f"y_true has {len(y_true)} labels but y_pred has {len(y_pred)}")
    if num_classes < 1:
        raise DataError(f"num_classes must be >= 1, got {num_classes}")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} contains labels outside [0, {num_classes})")
    return y_true, y_pred


def confusion_matrix(y_true, y_pred, num_classes: int) -> ConfusionMatrix:
    y_true, y_pred = _check_inputs(y_true, y_pred, num_classes)
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def report(y_true, y_pred, num_classes: int) -> EvaluationReport:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    if cm.total == 0:
        raise DataError("cannot score an empty prediction set")

    counts = cm.counts
    per_class = []
    for c in range(num_classes):
        tp = counts[c, c]
        fp = counts[:, c].sum() - tp
        fn = counts[c, :].sum() - tp
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = _ratio(2 * precision * recall, precision + recall)
        per_class.append(ClassScores(precision, recall, f1))

    return EvaluationReport(
        accuracy=_ratio(np.trace(counts), cm.total),
        per_class=per_class,
        macro_f1=float(sum(s.f1 for s in per_class) / num_classes),
        confusion=cm,
    )
