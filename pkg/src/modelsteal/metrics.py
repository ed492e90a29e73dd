"""Evaluation metrics: accuracy, one-vs-rest specificity/sensitivity for a
designated positive class, thief-victim agreement, and per-class F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, LabelError, ShapeError


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """K x K counts, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ShapeError("prediction and label sequences differ in length")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class from a confusion matrix; zero support or zero
    denominator yields 0 for that class."""
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=1) + cm.sum(axis=0)  # support + predicted count
    with np.errstate(invalid="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    return f1


@dataclass
class MetricsReport:
    accuracy: float
    specificity: float | None
    sensitivity: float | None
    agreement: float | None
    positive_class: int
    per_class_f1: list[float]
    n_test: int
    confusion: list[list[int]]  # thief vs truth

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def metrics_from_confusion(cm: np.ndarray, positive_class: int) -> tuple[float, float | None, float | None]:
    """(accuracy, specificity, sensitivity) with the one-vs-rest convention.

    Sensitivity is None when the positive class has no support, specificity
    None when everything is positive; undefined rates are reported as
    absent, never as 0.
    """
    cm = np.asarray(cm)
    n = cm.sum()
    if positive_class < 0 or positive_class >= cm.shape[0]:
        raise ConfigError("positive_class out of range")
    accuracy = float(np.trace(cm) / n)
    pos_support = cm[positive_class].sum()
    neg_support = n - pos_support
    tp = cm[positive_class, positive_class]
    # true negatives: true class != positive and predicted class != positive
    mask = np.arange(cm.shape[0]) != positive_class
    tn = cm[np.ix_(mask, mask)].sum()
    sensitivity = float(tp / pos_support) if pos_support > 0 else None
    specificity = float(tn / neg_support) if neg_support > 0 else None
    return accuracy, specificity, sensitivity


def compute_metrics(
    thief_preds,
    victim_preds,
    true_labels,
    positive_class: int,
    num_classes: int | None = None,
) -> MetricsReport:
    thief = np.asarray(thief_preds, dtype=np.int64)
    victim = np.asarray(victim_preds, dtype=np.int64)
    truth = np.asarray(true_labels, dtype=np.int64)
    if not (len(thief) == len(victim) == len(truth)) or len(thief) < 1:
        raise ShapeError("prediction/label sequences must share a length >= 1")
    k = num_classes or int(max(thief.max(), victim.max(), truth.max())) + 1
    cm = confusion_matrix(truth, thief, k)
    accuracy, specificity, sensitivity = metrics_from_confusion(cm, positive_class)
    return MetricsReport(
        accuracy=accuracy,
        specificity=specificity,
        sensitivity=sensitivity,
        agreement=float(np.mean(thief == victim)),
        positive_class=positive_class,
        per_class_f1=[float(v) for v in per_class_f1(cm)],
        n_test=len(thief),
        confusion=cm.tolist(),
    )


def report_victim_baseline(
    victim_preds, true_labels, positive_class: int, num_classes: int | None = None
) -> MetricsReport:
    """Same metric definitions applied to the victim itself; agreement is
    omitted (identically 1)."""
    report = compute_metrics(victim_preds, victim_preds, true_labels, positive_class, num_classes)
    report.agreement = None
    return report


def render_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Plain-text table of {method, accuracy, specificity, sensitivity,
    agreement}, one row per run."""
    def fmt(v):
        return f"{100 * v:6.2f}" if v is not None else "     -"

    width = max([len(name) for name, _ in rows] + [6])
    lines = [f"{'Method':<{width}}  {'Acc.':>6} {'Spec.':>6} {'Sens.':>6} {'Agr.':>6}"]
    for name, r in rows:
        lines.append(
            f"{name:<{width}}  {fmt(r.accuracy)} {fmt(r.specificity)} {fmt(r.sensitivity)} {fmt(r.agreement)}"
        )
    return "\n".join(lines)
