"""Confusion matrices and accuracy / precision / recall / F1 reports."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrix, IndexOutOfRange, LengthMismatch


@dataclass
class ConfusionMatrix:
    """Rows are the actual class, columns the predicted class."""

    counts: np.ndarray
    class_names: list

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


def confusion_matrix(preds, labels, num_classes: int, class_names=None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.size != labels.size:
        raise LengthMismatch(f"{preds.size} predictions for {labels.size} labels")
    if preds.size == 0:
        raise LengthMismatch("nothing to score")
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise IndexOutOfRange(f"class indices must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    if class_names is None:
        class_names = [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts, list(class_names))


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def scores(cm: ConfusionMatrix) -> dict:
    """Accuracy plus macro-averaged precision/recall/F1 and the per-class values.

    A class nobody predicted gets precision 0; a class absent from the labels
    gets recall 0.
    """
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, c.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    per_class = {
        name: {
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(cm.counts[i].sum()),
        }
        for i, name in enumerate(cm.class_names)
    }
    return {
        "accuracy": float(tp.sum() / c.sum()),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
        "average": "macro",
        "per_class": per_class,
    }


def _pct(v: float) -> str:
    return f"{100 * v:.2f}%"


def render_report(cms: dict, score_sets: dict) -> tuple[str, str]:
    """Text and JSON reports for ``{"detection": cm, "intensity": cm}``."""
    lines = []
    records = []
    for task in sorted(cms):
        cm, sc = cms[task], score_sets[task]
        lines.append(f"[{task}] accuracy={_pct(sc['accuracy'])} precision={_pct(sc['precision'])} "
                     f"recall={_pct(sc['recall'])} f1={_pct(sc['f1'])} ({sc['average']} average)")
        width = max(len(n) for n in cm.class_names)
        lines.append("  actual \\ predicted: " + " ".join(cm.class_names))
        for name, row in zip(cm.class_names, cm.counts):
            lines.append(f"  {name:>{width}} " + " ".join(f"{int(v):>6d}" for v in row))
        for name, pc in sc["per_class"].items():
            lines.append(f"  {name:>{width}} precision={_pct(pc['precision'])} "
                         f"recall={_pct(pc['recall'])} f1={_pct(pc['f1'])} support={pc['support']}")
        records.append({
            "task": task,
            "confusion": cm.counts.tolist(),
            "class_names": cm.class_names,
            "accuracy": sc["accuracy"],
            "precision": sc["precision"],
            "recall": sc["recall"],
            "f1": sc["f1"],
            "average": sc["average"],
            "per_class": sc["per_class"],
        })
    return "\n".join(lines) + "\n", json.dumps(records, indent=2, sort_keys=True) + "\n"
