"""Classification metrics: confusion matrix and averaged scores.

The confusion matrix is indexed [true, predicted]. Precision, recall, and
F1 are reported macro-averaged (plain mean over classes, the primary
convention here because it weighs rare classes equally) and
support-weighted. Classes with a zero denominator score 0 rather than
NaN, so reports stay finite on degenerate predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = ["MetricsReport", "compute_metrics", "metrics_to_dict",
           "confusion_to_csv"]


@dataclass(frozen=True)
class MetricsReport:
    confusion: np.ndarray          # [K, K] int64, rows true, cols predicted
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(true_labels, predicted_labels, num_classes: int) -> MetricsReport:
    """Confusion matrix plus accuracy and averaged precision/recall/F1."""
    true = np.asarray(true_labels, dtype=np.int64)
    pred = np.asarray(predicted_labels, dtype=np.int64)
    k = int(num_classes)
    if true.ndim != 1 or pred.ndim != 1 or true.shape != pred.shape:
        raise ShapeError(
            f"label arrays must be equal-length vectors, got "
            f"{true.shape} and {pred.shape}")
    if true.size == 0:
        raise ShapeError("cannot compute metrics of an empty label set")
    for name, arr in (("true", true), ("predicted", pred)):
        if arr.min() < 0 or arr.max() >= k:
            raise ShapeError(f"{name} labels must lie in [0, {k})")

    confusion = np.bincount(true * k + pred, minlength=k * k).reshape(k, k)
    diag = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1).astype(np.float64)
    predicted_count = confusion.sum(axis=0).astype(np.float64)

    precision = _safe_div(diag, predicted_count)
    recall = _safe_div(diag, support)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    total = float(true.size)
    weights = support / total
    return MetricsReport(
        confusion=confusion,
        accuracy=float(diag.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float(np.sum(weights * precision)),
        weighted_recall=float(np.sum(weights * recall)),
        weighted_f1=float(np.sum(weights * f1)),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
    )


def metrics_to_dict(report: MetricsReport) -> dict:
    """JSON-ready dict with a fixed key order."""
    return {
        "accuracy": report.accuracy,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "weighted_precision": report.weighted_precision,
        "weighted_recall": report.weighted_recall,
        "weighted_f1": report.weighted_f1,
        "per_class": {
            "precision": report.per_class_precision.tolist(),
            "recall": report.per_class_recall.tolist(),
            "f1": report.per_class_f1.tolist(),
        },
        "confusion": report.confusion.tolist(),
    }


def confusion_to_csv(report: MetricsReport, class_names) -> str:
    """Confusion matrix as CSV with a true\\predicted header column."""
    names = list(class_names)
    k = report.confusion.shape[0]
    if len(names) != k:
        raise ShapeError(f"{len(names)} class names for a {k}x{k} confusion matrix")
    lines = ["true\\predicted," + ",".join(names)]
    for i, name in enumerate(names):
        row = ",".join(str(int(v)) for v in report.confusion[i])
        lines.append(f"{name},{row}")
    return "\n".join(lines) + "\n"
