"""Classification, logit-transfer, and feature-transfer losses.

Stop-gradient contracts, fixed here and relied on by the training loop:

- ``kt_loss`` detaches its *target* argument internally.  Whoever is the
  target of distillation never feels that loss.
- ``dikt_loss`` detaches the teacher stack internally.  Gradients flow
  only into the student-side stack (and, through the gates the caller
  baked into it, the attention parameters).

Both phase totals are weighted sums of these pieces; ablation switches
drop terms by never building them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "ce_loss",
    "kt_loss",
    "dikt_loss",
    "teacher_total",
    "student_total",
    "LossBreakdown",
    "KL_DIRECTIONS",
]

KL_DIRECTIONS = ("forward", "reverse")


@dataclass
class LossBreakdown:
    """Scalar values of each term, for logging; total includes the weights."""

    ce: float = 0.0
    kt: float = 0.0
    dikt: float = 0.0
    total: float = 0.0


def _check_logits_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be [B, K], got shape {logits.data.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ValueError(
            f"labels must be one per row: logits {logits.data.shape}, labels {labels.shape}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    k = logits.data.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(
            f"label out of range [0, {k}): min={labels.min()}, max={labels.max()}"
        )
    return labels


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of true-class log-probabilities."""
    labels = _check_logits_labels(logits, labels)
    logp = T.log_softmax(logits)
    return -T.pick(logp, labels).mean()


def kt_loss(target_logits: Tensor, learner_logits: Tensor, tau: float,
            direction: str = "forward") -> Tensor:
    """Tempered KL between the two softened logit distributions.

    ``forward`` is KL(p_target || p_learner); ``reverse`` swaps the roles
    inside the divergence.  The target is detached here, so only the
    learner's logits carry gradient.  Mean over the batch; no extra
    temperature rescaling of the value.
    """
    if direction not in KL_DIRECTIONS:
        raise ValueError(f"direction must be one of {KL_DIRECTIONS}, got '{direction}'")
    if target_logits.data.shape != learner_logits.data.shape:
        raise ValueError(
            f"logit shapes differ: target {target_logits.data.shape}, "
            f"learner {learner_logits.data.shape}"
        )
    tgt = target_logits.detach()
    log_p = T.log_softmax(tgt, tau)          # constant
    log_q = T.log_softmax(learner_logits, tau)
    if direction == "forward":
        p = Tensor(np.exp(log_p.data))
        per_row = (p * (log_p - log_q)).sum(axis=-1)
    else:
        q = T.softmax_t(learner_logits, tau)
        per_row = (q * (log_q - log_p)).sum(axis=-1)
    return per_row.mean()


def dikt_loss(student_stack: Tensor, teacher_stack: Tensor) -> Tensor:
    """Mean squared error between activated stacks; teacher side detached."""
    if student_stack.data.shape != teacher_stack.data.shape:
        raise ValueError(
            f"activated stacks must match elementwise: student {student_stack.data.shape}, "
            f"teacher {teacher_stack.data.shape}"
        )
    d = student_stack - teacher_stack.detach()
    return (d * d).mean()


def teacher_total(teacher_logits: Tensor, student_logits: Tensor, labels: np.ndarray,
                  beta: float, tau: float, direction: str = "forward",
                  use_ce: bool = True, use_kt: bool = True
                  ) -> tuple[Tensor, LossBreakdown]:
    """Adapter-phase loss: ce(teacher) + beta * kt(student -> teacher)."""
    bd = LossBreakdown()
    total = Tensor(0.0)
    if use_ce:
        ce = ce_loss(teacher_logits, labels)
        bd.ce = ce.item()
        total = total + ce
    if use_kt:
        kt = kt_loss(student_logits, teacher_logits, tau, direction)
        bd.kt = kt.item()
        total = total + beta * kt
    bd.total = total.item()
    return total, bd


def student_total(student_logits: Tensor, teacher_logits: Tensor, labels: np.ndarray,
                  dikt_term: Tensor | None, beta: float, gamma: float, tau: float,
                  direction: str = "forward", use_kt: bool = True,
                  use_dikt: bool = True) -> tuple[Tensor, LossBreakdown]:
    """Student-phase loss: ce + beta * kt(teacher -> student) + gamma * dikt."""
    ce = ce_loss(student_logits, labels)
    bd = LossBreakdown(ce=ce.item())
    total = ce
    if use_kt:
        kt = kt_loss(teacher_logits, student_logits, tau, direction)
        bd.kt = kt.item()
        total = total + beta * kt
    if use_dikt:
        if dikt_term is None:
            raise ValueError("student_total needs a dikt term unless use_dikt is off")
        bd.dikt = dikt_term.item()
        total = total + gamma * dikt_term
    bd.total = total.item()
    return total, bd
