"""Shared supervised-training machinery used by the victim factory and the
anchor trainer: schedules, seeded batching, light augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, TrainingError


@dataclass
class OptimSpec:
    name: str = "sgd"
    lr: float = 0.01
    weight_decay: float = 5e-4
    momentum: float = 0.9

    def build(self, params) -> torch.optim.Optimizer:
        if self.name == "sgd":
            return torch.optim.SGD(
                params, lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay
            )
        if self.name == "adam":
            return torch.optim.Adam(params, lr=self.lr, weight_decay=self.weight_decay)
        raise ConfigError(f"unknown optimizer {self.name!r}")


@dataclass
class TrainSchedule:
    epochs: int = 50
    optim: OptimSpec = field(default_factory=OptimSpec)
    batch_size: int = 32
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


def batch_order(n: int, batch_size: int, generator: torch.Generator) -> Iterator[torch.Tensor]:
    perm = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def augment_batch(x: torch.Tensor, generator: torch.Generator, max_shift: int = 2) -> torch.Tensor:
    """Random horizontal flip plus integer translation, per sample."""
    n = x.shape[0]
    flip = torch.rand(n, generator=generator) < 0.5
    out = x.clone()
    out[flip] = torch.flip(out[flip], dims=[-1])
    shifts = torch.randint(-max_shift, max_shift + 1, (n, 2), generator=generator)
    padded = F.pad(out, (max_shift,) * 4)
    h, w = x.shape[-2:]
    for i in range(n):
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        out[i] = padded[i, :, max_shift + dy : max_shift + dy + h, max_shift + dx : max_shift + dx + w]
    return out


def fit_classifier(
    model: torch.nn.Module,
    images: np.ndarray,
    labels: np.ndarray,
    schedule: TrainSchedule,
    metric_fn: Callable[[torch.nn.Module], float] | None = None,
) -> tuple[dict, list[dict]]:
    """Cross-entropy training with cosine LR decay.

    If `metric_fn` is given it is evaluated after every epoch and the best
    checkpoint (ties: earliest epoch) is restored before returning. Returns
    (best-epoch record, full per-epoch trace).
    """
    x_all = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    y_all = torch.as_tensor(np.asarray(labels), dtype=torch.int64)
    gen = torch.Generator().manual_seed(schedule.seed)
    optimizer = schedule.optim.build(model.parameters())
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=schedule.epochs)

    trace: list[dict] = []
    best: dict | None = None
    best_state = None
    for epoch in range(1, schedule.epochs + 1):
        model.train()
        losses = []
        for idx in batch_order(len(x_all), schedule.batch_size, gen):
            xb, yb = x_all[idx], y_all[idx]
            if schedule.augment:
                xb = augment_batch(xb, gen)
            optimizer.zero_grad()
            loss = F.cross_entropy(model(xb), yb)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}", step=epoch)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        lr_sched.step()
        model.eval()
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if metric_fn is not None:
            record["val_metric"] = float(metric_fn(model))
            if best is None or record["val_metric"] > best["val_metric"]:
                best = record
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
        trace.append(record)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return best or trace[-1], trace
