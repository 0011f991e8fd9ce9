"""Confusion matrices and one-vs-rest accuracy/precision/recall/F1/specificity.

Any metric whose denominator is zero is reported as 0.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError

TABLE_ROWS = ("accuracy", "precision", "specificity", "recall", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [K, K]; rows true class, columns predicted class
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.class_names)
        writer.writerows(self.counts.tolist())
        return buf.getvalue()


def confusion(true_labels, predicted, k: int, class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ContractError(f"true/predicted shapes differ: {t.shape} vs {p.shape}")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= k):
        raise ContractError(f"labels must lie in 0..{k - 1}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(k))
    if len(names) != k:
        raise ContractError(f"{len(names)} class names for {k} classes")
    return ConfusionMatrix(counts, names)


def binary_counts(cm: ConfusionMatrix, class_index: int) -> tuple[int, int, int, int]:
    """One-vs-rest ``(TP, FP, FN, TN)`` for ``class_index``."""
    c = cm.counts
    tp = int(c[class_index, class_index])
    fp = int(c[:, class_index].sum()) - tp
    fn = int(c[class_index, :].sum()) - tp
    tn = cm.total - tp - fp - fn
    return tp, fp, fn, tn


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(float(np.trace(cm.counts)), cm.total)


def precision(tp: int, fp: int) -> float:
    return _ratio(tp, tp + fp)


def recall(tp: int, fn: int) -> float:
    return _ratio(tp, tp + fn)


def specificity(tn: int, fp: int) -> float:
    return _ratio(tn, tn + fp)


def f1(prec: float, rec: float) -> float:
    return _ratio(2 * rec * prec, rec + prec)


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    specificity: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_specificity: float
    macro_f1: float
    confusion: ConfusionMatrix

    def table_value(self, row: str) -> float:
        return {
            "accuracy": self.accuracy,
            "precision": self.macro_precision,
            "specificity": self.macro_specificity,
            "recall": self.macro_recall,
            "f1": self.macro_f1,
        }[row]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_specificity": self.macro_specificity,
            "macro_f1": self.macro_f1,
            "zero_denominator_rule": "metrics with a zero denominator are reported as 0",
            "per_class": [vars(m) for m in self.per_class],
            "confusion": {"class_names": list(self.confusion.class_names),
                          "counts": self.confusion.counts.tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        cm = ConfusionMatrix(np.array(d["confusion"]["counts"], dtype=np.int64),
                             tuple(d["confusion"]["class_names"]))
        return cls(tuple(ClassMetrics(**m) for m in d["per_class"]), d["accuracy"], d["macro_precision"],
                   d["macro_recall"], d["macro_specificity"], d["macro_f1"], cm)

    def save(self, directory: str | os.PathLike, model_name: str = "model") -> dict[str, Path]:
        """Write ``eval.json``, ``metrics.csv`` and ``confusion.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"eval_json": directory / "eval.json", "metrics_csv": directory / "metrics.csv",
                 "confusion_csv": directory / "confusion.csv"}
        paths["eval_json"].write_text(self.to_json(), encoding="utf-8")
        paths["metrics_csv"].write_text(metrics_table({model_name: self}), encoding="utf-8")
        paths["confusion_csv"].write_text(self.confusion.to_csv(), encoding="utf-8")
        return paths


def evaluate(true_labels, predicted, k: int, class_names: Sequence[str] | None = None) -> EvalReport:
    cm = confusion(true_labels, predicted, k, class_names)
    per_class = []
    for i, name in enumerate(cm.class_names):
        tp, fp, fn, tn = binary_counts(cm, i)
        p, r = precision(tp, fp), recall(tp, fn)
        per_class.append(ClassMetrics(name, tp, fp, fn, tn, p, r, specificity(tn, fp), f1(p, r)))

    def macro(attr):
        return float(np.mean([getattr(m, attr) for m in per_class]))

    return EvalReport(tuple(per_class), accuracy(cm), macro("precision"), macro("recall"),
                      macro("specificity"), macro("f1"), cm)


def metrics_table(reports: dict[str, EvalReport]) -> str:
    """Rows accuracy/precision/specificity/recall/f1, one column per model."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", *reports])
    for row in TABLE_ROWS:
        writer.writerow([row, *(repr(float(r.table_value(row))) for r in reports.values())])
    return buf.getvalue()
