"""Query-set selection: seeded random (Knockoff-style) and greedy k-Center
farthest-point selection (ActiveThief-style), run in budget cycles with the
anchor retrained between cycles."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import LabeledSet, ProxyPool, build_labeled_set
from .errors import SelectionError

logger = logging.getLogger(__name__)


def select_random(pool_size: int, n: int, seed: int, exclude: Sequence[int] = ()) -> list[int]:
    """First n not-yet-selected entries of the seed's permutation (PCG64).

    Reusing one seed across cycles with a growing exclusion set walks the
    same permutation, so multi-cycle random selection equals a single
    larger selection.
    """
    excluded = set(exclude)
    if n > pool_size - len(excluded):
        raise SelectionError(f"cannot select {n} from {pool_size - len(excluded)} remaining")
    perm = np.random.default_rng(seed).permutation(pool_size)
    out = [int(i) for i in perm if int(i) not in excluded]
    return out[:n]


def select_kcenter(embeddings: np.ndarray, selected: Sequence[int], k: int) -> list[int]:
    """Greedy farthest-point picks: repeatedly take the unselected point with
    the largest min Euclidean distance to the selected set. Ties break to
    the lowest index; returns the k new indices in pick order."""
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    if k == 0:
        return []
    if len(selected) == 0:
        raise SelectionError("k-center requires a nonempty seed selection")
    if k > n - len(selected):
        raise SelectionError(f"cannot select {k} from {n - len(selected)} remaining")

    min_dist = np.full(n, np.inf)
    for s in selected:
        min_dist = np.minimum(min_dist, np.linalg.norm(emb - emb[s], axis=1))
    chosen = set(selected)
    min_dist[list(chosen)] = -np.inf
    picks: list[int] = []
    for _ in range(k):
        idx = int(np.argmax(min_dist))  # first max = lowest index on ties
        picks.append(idx)
        chosen.add(idx)
        min_dist = np.minimum(min_dist, np.linalg.norm(emb - emb[idx], axis=1))
        min_dist[idx] = -np.inf
    return picks


def split_budget(total: int, num_cycles: int) -> list[int]:
    """Uniform split; earlier cycles take the remainder, one extra each."""
    if num_cycles < 1:
        raise SelectionError("num_cycles must be >= 1")
    base, rem = divmod(total, num_cycles)
    return [base + 1] * rem + [base] * (num_cycles - rem)


def pool_probabilities(model: torch.nn.Module, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Softmax probability embeddings of the pool under the current anchor."""
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(images), batch):
            x = torch.as_tensor(images[start : start + batch], dtype=torch.float32)
            outs.append(torch.softmax(model(x), dim=-1).numpy())
    return np.concatenate(outs, axis=0)


@dataclass
class SelectionResult:
    labeled: LabeledSet
    per_cycle_indices: list[list[int]]
    anchor: torch.nn.Module | None

    @property
    def all_indices(self) -> list[int]:
        return [i for cycle in self.per_cycle_indices for i in cycle]


def run_cycles(
    pool: ProxyPool,
    oracle,
    strategy: str,
    total_budget: int,
    num_cycles: int,
    seed: int,
    train_fn: Callable[[LabeledSet], torch.nn.Module] | None = None,
) -> SelectionResult:
    """Select-query-retrain loop. Each cycle queries its share of the budget,
    appends to the labeled set, and retrains the anchor via `train_fn`.
    k-Center's first cycle is seeded by random selection (no anchor yet);
    later cycles embed the pool with the current anchor's probabilities."""
    if strategy not in ("random", "kcenter"):
        raise SelectionError(f"unknown strategy {strategy!r}")
    if strategy == "kcenter" and train_fn is None:
        raise SelectionError("k-center cycling requires a train_fn for embeddings")

    sizes = split_budget(total_budget, num_cycles)
    selected: list[int] = []
    per_cycle: list[list[int]] = []
    labeled: LabeledSet | None = None
    anchor: torch.nn.Module | None = None
    for cycle, size in enumerate(sizes):
        if strategy == "random" or cycle == 0:
            new = select_random(len(pool), size, seed, exclude=selected)
        else:
            emb = pool_probabilities(anchor, pool.images)
            new = select_kcenter(emb, selected, size)
        batch = build_labeled_set(pool, new, oracle)
        labeled = (
            batch
            if labeled is None
            else LabeledSet(
                labeled.ids + batch.ids,
                np.concatenate([labeled.images, batch.images]),
                np.concatenate([labeled.labels, batch.labels]),
            )
        )
        selected.extend(new)
        per_cycle.append(list(map(int, new)))
        if train_fn is not None:
            logger.info("cycle %d/%d: retraining anchor on %d labels", cycle + 1, num_cycles, len(labeled))
            anchor = train_fn(labeled)
    return SelectionResult(labeled, per_cycle, anchor)


def save_selection_manifest(
    path: str | Path, strategy: str, seed: int, per_cycle_indices: list[list[int]], pool: ProxyPool
) -> None:
    manifest = {
        "strategy": strategy,
        "seed": seed,
        "num_cycles": len(per_cycle_indices),
        "cycles": [[pool.ids[i] for i in cycle] for cycle in per_cycle_indices],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
