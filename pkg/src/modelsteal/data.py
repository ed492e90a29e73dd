"""Attacker-side data management: the unlabeled proxy pool, the queried
labeled set, train/validation splitting, and split persistence.

Pools and sets are immutable after construction; all splits are seeded and
persisted by sample_id so query logs survive reshuffling.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, DataError, SelectionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProxyPool:
    """Indexed unlabeled image collection drawn from the proxy distribution."""

    ids: tuple[str, ...]
    images: np.ndarray  # (n, c, h, w) float32
    provenance: str = "unknown"

    def __post_init__(self):
        if len(self.ids) != len(self.images):
            raise DataError("ids and images lengths differ")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("sample ids are not unique")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class LabeledSet:
    """Proxy samples paired with victim hard labels (D_l or a split of it)."""

    ids: tuple[str, ...]
    images: np.ndarray
    labels: np.ndarray  # int64, victim hard labels

    def __post_init__(self):
        if not (len(self.ids) == len(self.images) == len(self.labels)):
            raise DataError("ids/images/labels lengths differ")

    def __len__(self) -> int:
        return len(self.ids)

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


@dataclass(frozen=True)
class UnlabeledSet:
    ids: tuple[str, ...]
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")


def build_labeled_set(pool: ProxyPool, indices: Sequence[int], oracle) -> LabeledSet:
    """Spend budget labeling `indices` of the pool through the oracle.

    BudgetExhausted propagates before any state here changes. Per-class
    counts of the resulting set are logged (imbalance feeds the logit-
    adjustment priors downstream).
    """
    indices = list(indices)
    if len(set(indices)) != len(indices):
        raise SelectionError("duplicate indices in selection")
    if indices and (min(indices) < 0 or max(indices) >= len(pool)):
        raise SelectionError("selection index out of pool range")
    ids = tuple(pool.ids[i] for i in indices)
    images = pool.images[indices]
    labels = oracle.query(images, sample_ids=ids)
    counts = np.bincount(labels, minlength=oracle.num_classes)
    logger.info("labeled set built: n=%d per-class counts=%s", len(ids), counts.tolist())
    return LabeledSet(ids, images, labels)


def split_train_val(labeled: LabeledSet, spec: SplitSpec) -> tuple[LabeledSet, LabeledSet]:
    """Seeded unstratified split; |val| = round(val_fraction * n), min 1."""
    n = len(labeled)
    if n < 2:
        raise DataError("need at least 2 labeled samples to split")
    n_val = min(n - 1, max(1, int(round(spec.val_fraction * n))))
    perm = np.random.default_rng(spec.seed).permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    def take(idx):
        return LabeledSet(
            tuple(labeled.ids[i] for i in idx), labeled.images[idx], labeled.labels[idx]
        )

    return take(train_idx), take(val_idx)


def unlabeled_remainder(pool: ProxyPool, labeled: LabeledSet) -> UnlabeledSet:
    """pool minus labeled, by sample_id; no labels attached."""
    pool_ids = set(pool.ids)
    foreign = [sid for sid in labeled.ids if sid not in pool_ids]
    if foreign:
        raise ConsistencyError(f"labeled ids not in pool: {foreign[:5]}")
    taken = set(labeled.ids)
    keep = [i for i, sid in enumerate(pool.ids) if sid not in taken]
    return UnlabeledSet(tuple(pool.ids[i] for i in keep), pool.images[keep])


def save_split_manifest(
    path: str | Path, pool: ProxyPool, spec: SplitSpec, train: LabeledSet, val: LabeledSet
) -> None:
    manifest = {
        "provenance": pool.provenance,
        "seed": spec.seed,
        "val_fraction": spec.val_fraction,
        "train_ids": list(train.ids),
        "val_ids": list(val.ids),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_split_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
