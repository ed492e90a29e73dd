"""Shared numerical primitives: temperature softmax, KL divergence,
cross-entropy, and flat-parameter EMA.

All functions accept torch tensors (float32 or float64) and are pure:
inputs are never mutated. Gradients flow through `logits` arguments via
autograd, which the trainers rely on.
"""

from __future__ import annotations

import torch

from .errors import ConfigError, LabelError, ShapeError

# Probabilities are clamped to this floor inside logarithms. Hard labels
# and saturated softmaxes produce exact zeros otherwise.
PROB_EPS = 1e-8


def softmax_with_temperature(logits: torch.Tensor, tau: float) -> torch.Tensor:
    """Row-wise softmax of logits / tau, stable under large magnitudes."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if not torch.isfinite(logits).all():
        raise ValueError("logits contain non-finite entries")
    # torch.softmax already performs max-subtraction internally.
    return torch.softmax(logits / tau, dim=-1)


def kl_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) = sum_k p_k ln(p_k / q_k), with 0 * ln(0/q) == 0.

    Operates on the last dimension; 1-D inputs give a scalar, 2-D inputs
    give a per-row vector. q is clamped to PROB_EPS below the log.
    """
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch: {tuple(p.shape)} vs {tuple(q.shape)}")
    log_ratio = torch.log(p.clamp(min=PROB_EPS)) - torch.log(q.clamp(min=PROB_EPS))
    terms = torch.where(p > 0, p * log_ratio, torch.zeros((), dtype=p.dtype))
    return terms.sum(dim=-1)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean of -ln softmax(logits)[y] over the batch (log-sum-exp stable)."""
    if logits.ndim != 2:
        raise ShapeError(f"expected 2-D logits, got shape {tuple(logits.shape)}")
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError("batch sizes of logits and labels differ")
    k = logits.shape[1]
    if labels.numel() > 0 and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    log_probs = torch.log_softmax(logits, dim=-1)
    return -log_probs.gather(1, labels.view(-1, 1)).mean()


def ema_update(theta_t: torch.Tensor, theta_s: torch.Tensor, m: float) -> torch.Tensor:
    """Pure exponential-moving-average step: m * theta_t + (1 - m) * theta_s."""
    if theta_t.shape != theta_s.shape:
        raise ShapeError("parameter vectors differ in length")
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1], got {m}")
    if m == 1.0:
        return theta_t.clone()
    if m == 0.0:
        return theta_s.clone()
    return m * theta_t + (1.0 - m) * theta_s


def ema_update_module(teacher: torch.nn.Module, student: torch.nn.Module, m: float) -> None:
    """In-place EMA over paired module parameters.

    m == 1 and m == 0 short-circuit so the teacher stays bit-identical to
    its previous state / the student respectively.
    """
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1], got {m}")
    with torch.no_grad():
        for p_t, p_s in zip(teacher.parameters(), student.parameters(), strict=True):
            if m == 1.0:
                continue
            if m == 0.0:
                p_t.copy_(p_s)
            else:
                p_t.mul_(m).add_(p_s, alpha=1.0 - m)
