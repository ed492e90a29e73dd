"""Stage one: supervised anchor training on the queried label set, with the
best checkpoint picked by validation macro-F1."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import torch

from .data import LabeledSet
from .errors import DataError, LabelError
from .metrics import confusion_matrix, per_class_f1
from .models import build_model
from .trainloop import TrainSchedule, fit_classifier

# Anchor defaults: conventional small-image supervised training.
AnchorSchedule = TrainSchedule


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    """Macro-averaged F1; classes with zero support contribute 0."""
    cm = confusion_matrix(y_true, y_pred, num_classes)
    return float(np.mean(per_class_f1(cm)))


def evaluate_f1(model: torch.nn.Module, val: LabeledSet) -> float:
    if len(val) == 0:
        raise DataError("validation set is empty")
    with torch.no_grad():
        preds = model(torch.as_tensor(val.images, dtype=torch.float32)).argmax(dim=1).numpy()
    return macro_f1(val.labels, preds, model.num_classes)


def train_anchor(
    train: LabeledSet,
    val: LabeledSet,
    arch: str,
    schedule: AnchorSchedule,
    num_classes: int,
    trace_path: str | Path | None = None,
) -> tuple[torch.nn.Module, list[dict]]:
    """Train on victim labels only; return the checkpoint with the highest
    validation macro-F1 (ties -> earliest epoch) and the per-epoch trace."""
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation sets must be nonempty")
    for labels in (train.labels, val.labels):
        if labels.min() < 0 or labels.max() >= num_classes:
            raise LabelError(f"labels must lie in [0, {num_classes})")
    if len(np.unique(train.labels)) < 2:
        warnings.warn("anchor training labels contain a single observed class", stacklevel=2)

    in_channels, size = train.images.shape[1], train.images.shape[2]
    model = build_model(arch, num_classes, in_channels, size, seed=schedule.seed)
    _, trace = fit_classifier(
        model,
        train.images,
        train.labels,
        schedule,
        metric_fn=lambda m: evaluate_f1(m, val),
    )
    trace = [
        {"epoch": r["epoch"], "train_loss": r["train_loss"], "val_f1": r["val_metric"]}
        for r in trace
    ]
    if trace_path is not None:
        Path(trace_path).write_text("".join(json.dumps(r) + "\n" for r in trace))
    return model, trace
