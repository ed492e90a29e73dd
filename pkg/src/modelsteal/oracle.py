"""The black-box victim oracle: hard labels only, budget-enforced, logged.

The wrapped classifier is never reachable through the public surface; the
only output is the argmax class per image. An optional defense hook may
perturb the probability vector before the argmax is taken.
"""

from __future__ import annotations

import datetime
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import BudgetExhausted, ConfigError, DataError, ShapeError
from .models import build_model
from .trainloop import TrainSchedule, fit_classifier

DefenseHook = Callable[[np.ndarray], np.ndarray]


class QueryBudget:
    """Monotonic query accounting; `charge` is all-or-nothing."""

    def __init__(self, limit: int):
        if limit < 0:
            raise ConfigError("budget limit must be nonnegative")
        self.limit = int(limit)
        self.used = 0

    @property
    def remaining(self) -> int:
        return self.limit - self.used

    def charge(self, n: int) -> None:
        if self.used + n > self.limit:
            raise BudgetExhausted(
                f"batch of {n} exceeds remaining budget {self.remaining} of {self.limit}"
            )
        self.used += n


@dataclass
class QueryRecord:
    sample_id: str
    hard_label: int
    budget_remaining: int
    timestamp: str

    def to_json(self) -> str:
        # field order is part of the log format
        return json.dumps(
            {
                "sample_id": self.sample_id,
                "hard_label": self.hard_label,
                "budget_remaining": self.budget_remaining,
                "timestamp": self.timestamp,
            }
        )


def utc_clock() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class LogicalClock:
    """Deterministic stand-in for wall time; one tick per record."""

    def __init__(self, start: str = "1970-01-01T00:00:00+00:00"):
        self._t = datetime.datetime.fromisoformat(start)
        self._ticks = 0

    def __call__(self) -> str:
        stamp = self._t + datetime.timedelta(seconds=self._ticks)
        self._ticks += 1
        return stamp.isoformat()


class VictimOracle:
    """Wraps a trained classifier behind a hard-label, budgeted interface."""

    def __init__(
        self,
        victim: torch.nn.Module,
        budget: QueryBudget,
        defense: DefenseHook | None = None,
        clock: Callable[[], str] | None = None,
    ):
        self.__victim = victim.eval()
        self.budget = budget
        self.defense = defense
        self.log: list[QueryRecord] = []
        self._clock = clock or utc_clock
        self._lock = threading.Lock()
        self._expected_shape = (victim.in_channels, victim.image_size, victim.image_size)
        self.num_classes = victim.num_classes

    @property
    def remaining_budget(self) -> int:
        return self.budget.remaining

    def query(self, images, sample_ids: Sequence[str] | None = None) -> np.ndarray:
        """Hard labels for a batch of images; charges one budget unit per image.

        The whole batch is rejected (BudgetExhausted, no state change) if it
        does not fit in the remaining budget. Argmax ties break to the lowest
        class index.
        """
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        if x.ndim != 4 or tuple(x.shape[1:]) != self._expected_shape:
            raise ShapeError(
                f"expected images of shape (n, {self._expected_shape}), got {tuple(x.shape)}"
            )
        n = x.shape[0]
        if sample_ids is None:
            sample_ids = [f"q{i:06d}" for i in range(len(self.log), len(self.log) + n)]
        elif len(sample_ids) != n:
            raise ShapeError("sample_ids length does not match batch size")

        with self._lock:
            used_before = self.budget.used
            self.budget.charge(n)  # raises before any answer is produced
            with torch.no_grad():
                probs = torch.softmax(self.__victim(x), dim=-1).numpy()
            if self.defense is not None:
                probs = self.defense(probs)
                if probs.shape != (n, self.num_classes) or np.any(probs < -1e-9):
                    raise DataError("defense hook returned invalid probability rows")
                if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
                    raise DataError("defense hook output rows do not sum to 1")
            labels = np.argmax(probs, axis=1).astype(np.int64)  # first max -> lowest index
            for i, (sid, y) in enumerate(zip(sample_ids, labels)):
                # per-image accounting: remaining decreases strictly record to record
                remaining = self.budget.limit - (used_before + i + 1)
                self.log.append(QueryRecord(sid, int(y), remaining, self._clock()))
        return labels

    def save_log(self, path: str | Path) -> None:
        Path(path).write_text("".join(r.to_json() + "\n" for r in self.log))


def load_query_log(path: str | Path) -> list[QueryRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        records.append(QueryRecord(**d))
    return records


def train_victim(
    images: np.ndarray,
    labels: np.ndarray,
    arch: str = "smallconv",
    schedule: TrainSchedule | None = None,
    holdout_fraction: float = 0.1,
    seed: int = 0,
) -> tuple[torch.nn.Module, dict]:
    """Desk-scale victim factory: supervised training with a held-out
    accuracy recorded for the checkpoint sidecar."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise DataError("victim training set is empty")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("victim training set contains a single class")
    schedule = schedule or TrainSchedule(epochs=30, seed=seed)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(images))
    n_hold = max(1, int(round(holdout_fraction * len(images))))
    hold, train = perm[:n_hold], perm[n_hold:]

    k = int(labels.max()) + 1
    model = build_model(arch, k, images.shape[1], images.shape[2], seed=schedule.seed)

    def holdout_accuracy(m: torch.nn.Module) -> float:
        with torch.no_grad():
            preds = m(torch.as_tensor(images[hold])).argmax(dim=1).numpy()
        return float(np.mean(preds == labels[hold]))

    _, trace = fit_classifier(
        model, images[train], labels[train], schedule, metric_fn=holdout_accuracy
    )
    acc = holdout_accuracy(model)
    meta = {"holdout_accuracy": acc, "epochs": schedule.epochs, "seed": seed}
    return model, meta
