"""Stage two: semi-supervised student training on labeled + unlabeled proxy
data under a frozen anchor and an EMA teacher.

Total loss per step is L = L_l + lambda * L_u:

* labeled: (1 - alpha) * cross-entropy on victim hard labels (with optional
  logit adjustment on the student's logits) + alpha * temperature-scaled
  distillation against the anchor;
* unlabeled: (1 - beta) * distillation against the teacher + beta * against
  the anchor, each restricted to samples whose anchor max-softmax (at
  temperature 1) exceeds the confidence threshold rho.

Both distillation terms place the fixed target first in the KL by default,
the standard distillation direction; the student-first direction is kept
behind `kd_student_first` for ablation. The teacher starts bit-exact from
the anchor and moves by theta_t <- m * theta_t + (1 - m) * theta_s after
every optimizer step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import LabeledSet, UnlabeledSet
from .errors import ConfigError, ShapeError, TrainingError
from .models import ARCHITECTURES, build_model, get_flat_params, set_flat_params
from .numerics import cross_entropy, ema_update_module, kl_divergence, softmax_with_temperature
from .trainloop import OptimSpec, augment_batch, batch_order

logger = logging.getLogger(__name__)


@dataclass
class LossConfig:
    alpha: float = 0.4       # CE vs anchor-KD mix on labeled data
    beta: float = 0.5        # teacher-KD vs anchor-KD mix on unlabeled data
    tau: float = 1.5         # distillation temperature
    lam: float = 1.0         # unlabeled-loss weight
    rho: float = 0.95        # anchor-confidence mask threshold
    m: float = 0.999         # teacher EMA momentum
    la_enabled: bool = True
    la_priors: tuple[float, ...] | None = None
    la_scale: float = 1.0
    kd_student_first: bool = False

    def __post_init__(self):
        # alpha/beta ranges are widened to [0, 1]: the endpoint reductions
        # (alpha=0 -> plain CE, beta=1 -> anchor-only) are part of the contract.
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if not 0.0 <= self.m <= 1.0:
            raise ConfigError("EMA momentum must lie in [0, 1]")
        if self.la_enabled and self.la_priors is not None:
            priors = np.asarray(self.la_priors, dtype=np.float64)
            if np.any(priors <= 0) or not np.isclose(priors.sum(), 1.0, atol=1e-6):
                raise ConfigError("la_priors must be positive and sum to 1")


@dataclass
class BatchPlan:
    b_l: int = 32
    b_u: int = 32
    epochs: int = 100
    augment: bool = True  # flip/shift on both labeled and unlabeled batches

    def __post_init__(self):
        if self.b_l < 1 or self.b_u < 0 or self.epochs < 1:
            raise ConfigError("require b_l >= 1, b_u >= 0, epochs >= 1")


def class_priors(labels: np.ndarray, num_classes: int, smoothing: float = 1.0) -> tuple[float, ...]:
    """Empirical label frequencies with additive smoothing (default +1)."""
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64) + smoothing
    return tuple(counts / counts.sum())


def apply_logit_adjustment(logits: torch.Tensor, priors, scale: float) -> torch.Tensor:
    """Add scale * ln(prior_k) to column k. Used on the labeled path only."""
    p = torch.as_tensor(np.asarray(priors), dtype=logits.dtype)
    if p.numel() != logits.shape[-1]:
        raise ShapeError("priors length does not match number of classes")
    if torch.any(p <= 0):
        raise ConfigError("priors must be strictly positive (smooth them first)")
    return logits + scale * torch.log(p)


def _kd_per_sample(student_logits: torch.Tensor, target_logits: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """tau^2-scaled KL between tau-softened target and student, per sample.

    The target is detached; gradient reaches only the student logits.
    """
    p_s = softmax_with_temperature(student_logits, cfg.tau)
    p_t = softmax_with_temperature(target_logits.detach(), cfg.tau)
    if cfg.kd_student_first:
        kl = kl_divergence(p_s, p_t)
    else:
        kl = kl_divergence(p_t, p_s)
    return cfg.tau**2 * kl


def labeled_loss(
    student_logits: torch.Tensor,
    anchor_logits: torch.Tensor,
    labels: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """(1 - alpha) * CE + alpha * anchor KD, means over the labeled batch."""
    if student_logits.shape != anchor_logits.shape:
        raise ShapeError("student and anchor logits differ in shape")
    ce_logits = student_logits
    if cfg.la_enabled and cfg.la_priors is not None:
        ce_logits = apply_logit_adjustment(student_logits, cfg.la_priors, cfg.la_scale)
    ce = cross_entropy(ce_logits, labels)
    if cfg.alpha == 0.0:
        return ce
    kd = _kd_per_sample(student_logits, anchor_logits, cfg).mean()
    if cfg.alpha == 1.0:
        return kd
    return (1.0 - cfg.alpha) * ce + cfg.alpha * kd


def confidence_mask(anchor_logits: torch.Tensor, rho: float) -> torch.Tensor:
    """Boolean per-sample mask: anchor max-softmax at temperature 1 > rho."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("rho must lie in [0, 1]")
    with torch.no_grad():
        conf = torch.softmax(anchor_logits, dim=-1).max(dim=-1).values
    return conf > rho


def unlabeled_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    anchor_logits: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """(1 - beta) * teacher KD + beta * anchor KD, averaged over samples
    passing the anchor-confidence mask; exactly 0 (no gradient) when none
    pass. The same mask gates both terms."""
    if not (student_logits.shape == teacher_logits.shape == anchor_logits.shape):
        raise ShapeError("student/teacher/anchor logits differ in shape")
    mask = confidence_mask(anchor_logits, cfg.rho)
    n_pass = int(mask.sum())
    if n_pass == 0:
        return torch.zeros((), dtype=student_logits.dtype)
    kd_t = _kd_per_sample(student_logits, teacher_logits, cfg)
    kd_a = _kd_per_sample(student_logits, anchor_logits, cfg)
    m = mask.to(student_logits.dtype)
    return ((1.0 - cfg.beta) * (kd_t * m).sum() + cfg.beta * (kd_a * m).sum()) / n_pass


class UnlabeledCursor:
    """Seeded shuffle over the unlabeled pool that spills across epochs and
    reshuffles only when exhausted."""

    def __init__(self, n: int, seed: int):
        self._n = n
        self._gen = torch.Generator().manual_seed(seed)
        self._order = torch.randperm(n, generator=self._gen) if n else torch.empty(0, dtype=torch.int64)
        self._pos = 0

    def next_batch(self, size: int) -> torch.Tensor:
        if self._n == 0 or size == 0:
            return torch.empty(0, dtype=torch.int64)
        out = []
        while size > 0:
            take = min(size, self._n - self._pos)
            out.append(self._order[self._pos : self._pos + take])
            self._pos += take
            size -= take
            if self._pos == self._n:
                self._order = torch.randperm(self._n, generator=self._gen)
                self._pos = 0
        return torch.cat(out)


@dataclass
class StudentTrainResult:
    student: torch.nn.Module
    teacher: torch.nn.Module
    trace: list[dict] = field(default_factory=list)


def train_student(
    labeled_train: LabeledSet,
    labeled_val: LabeledSet,
    unlabeled: UnlabeledSet,
    anchor: torch.nn.Module,
    cfg: LossConfig,
    plan: BatchPlan,
    optim: OptimSpec | None = None,
    seed: int = 0,
    init: str = "random",
    trace_path: str | Path | None = None,
) -> StudentTrainResult:
    """Run the stage-two loop; the returned student is the thief model.

    One epoch is one pass over the labeled data; unlabeled batches come from
    a persistent cursor that spills over epoch boundaries. The EMA teacher
    update follows every optimizer step. The anchor is frozen throughout
    (verified before returning).
    """
    if init not in ("random", "anchor"):
        raise ConfigError(f"unknown student init {init!r}")
    optim = optim or OptimSpec()
    k = anchor.num_classes
    anchor_vec = get_flat_params(anchor)
    anchor.eval()
    for p in anchor.parameters():
        p.requires_grad_(False)

    arch_id = next(name for name, cls in ARCHITECTURES.items() if isinstance(anchor, cls))
    student = build_model(arch_id, k, anchor.in_channels, anchor.image_size, seed=seed)
    if init == "anchor":
        set_flat_params(student, anchor_vec.clone())
    teacher = build_model(arch_id, k, anchor.in_channels, anchor.image_size)
    set_flat_params(teacher, anchor_vec.clone())  # bit-exact anchor start
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)

    cfg_run = cfg
    if cfg.la_enabled and cfg.la_priors is None:
        cfg_run = replace(cfg, la_priors=class_priors(labeled_train.labels, k))

    x_l = torch.as_tensor(labeled_train.images, dtype=torch.float32)
    y_l = torch.as_tensor(labeled_train.labels, dtype=torch.int64)
    x_u = torch.as_tensor(unlabeled.images, dtype=torch.float32)
    x_val = torch.as_tensor(labeled_val.images, dtype=torch.float32) if len(labeled_val) else None

    optimizer = optim.build(student.parameters())
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=plan.epochs)
    gen_l = torch.Generator().manual_seed(seed)
    cursor = UnlabeledCursor(len(x_u), seed + 1)
    # separate augmentation streams so skipping the unlabeled path (lam=0,
    # empty pool) leaves the labeled trajectory untouched
    gen_aug_l = torch.Generator().manual_seed(seed + 2)
    gen_aug_u = torch.Generator().manual_seed(seed + 3)
    use_unlabeled = cfg_run.lam > 0 and plan.b_u > 0 and len(x_u) > 0

    trace: list[dict] = []
    step = 0
    for epoch in range(1, plan.epochs + 1):
        student.train()
        ep_ll, ep_lu, ep_pass = [], [], []
        for idx in batch_order(len(x_l), plan.b_l, gen_l):
            xb, yb = x_l[idx], y_l[idx]
            if plan.augment:
                xb = augment_batch(xb, gen_aug_l)
            with torch.no_grad():
                anchor_logits_l = anchor(xb)
            loss_l = labeled_loss(student(xb), anchor_logits_l, yb, cfg_run)
            if use_unlabeled:
                u_idx = cursor.next_batch(plan.b_u)
                xu = x_u[u_idx]
                if plan.augment:
                    xu = augment_batch(xu, gen_aug_u)
                with torch.no_grad():
                    anchor_logits_u = anchor(xu)
                    teacher_logits_u = teacher(xu)
                loss_u = unlabeled_loss(student(xu), teacher_logits_u, anchor_logits_u, cfg_run)
                ep_pass.append(float(confidence_mask(anchor_logits_u, cfg_run.rho).float().mean()))
                loss = loss_l + cfg_run.lam * loss_u
            else:
                loss_u = torch.zeros(())
                loss = loss_l
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}", step=step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ema_update_module(teacher, student, cfg_run.m)
            ep_ll.append(float(loss_l.detach()))
            ep_lu.append(float(loss_u.detach()))
            step += 1
        lr_sched.step()
        student.eval()
        record = {
            "epoch": epoch,
            "labeled_loss": float(np.mean(ep_ll)),
            "unlabeled_loss": float(np.mean(ep_lu)),
            "mask_pass_rate": float(np.mean(ep_pass)) if ep_pass else 0.0,
        }
        if x_val is not None:
            with torch.no_grad():
                preds = student(x_val).argmax(dim=1).numpy()
            record["val_accuracy"] = float(np.mean(preds == labeled_val.labels))
        trace.append(record)

    if not torch.equal(get_flat_params(anchor), anchor_vec):
        raise TrainingError("anchor parameters changed during student training")
    student.eval()
    if trace_path is not None:
        Path(trace_path).write_text("".join(json.dumps(r) + "\n" for r in trace))
    return StudentTrainResult(student, teacher, trace)
