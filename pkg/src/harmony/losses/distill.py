"""Feature self-distillation: global CLS, local MIM, and their average."""

from __future__ import annotations

from collections.abc import Sequence

import torch


def softmax_with_temp(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Tempered softmax over the last dim, stabilized by max subtraction."""
    if temperature <= 0:
        raise ValueError(f"temperature {temperature} must be positive")
    scaled = logits / temperature
    scaled = scaled - scaled.max(dim=-1, keepdim=True).values
    return scaled.softmax(dim=-1)


def _ce_rows(teacher_probs: torch.Tensor, student_logits: torch.Tensor,
             student_temperature: float) -> torch.Tensor:
    """Per-row cross-entropy H(teacher, student) with tempered student softmax."""
    if teacher_probs.shape[-1] != student_logits.shape[-1]:
        raise ValueError("teacher/student output dims differ")
    log_p = (student_logits / student_temperature).log_softmax(dim=-1)
    return -(teacher_probs * log_p).sum(dim=-1)


def cls_loss(teacher_cls_probs: Sequence[torch.Tensor],
             student_cls_logits: Sequence[torch.Tensor],
             student_temperature: float) -> torch.Tensor:
    """Average CE over every (teacher global, student view) pair with
    differing view indices. Student views are ordered globals-first so the
    first len(teacher) indices coincide with the teacher's global views.
    """
    total = None
    n_pairs = 0
    for ti, t_probs in enumerate(teacher_cls_probs):
        for si, s_logits in enumerate(student_cls_logits):
            if si == ti:
                continue
            ce = _ce_rows(t_probs.detach(), s_logits, student_temperature).mean()
            total = ce if total is None else total + ce
            n_pairs += 1
    if total is None:
        raise ValueError("no teacher/student view pairs")
    return total / n_pairs


def mim_loss(teacher_patch_probs: torch.Tensor, student_patch_logits: torch.Tensor,
             mask: torch.Tensor, student_temperature: float,
             normalize_by_masked: bool = True) -> torch.Tensor:
    """CE between teacher and student patch distributions at masked positions.

    teacher_patch_probs, student_patch_logits: (B, L, K); mask: (B, L) bool.
    Divided by the masked-position count unless normalize_by_masked is False.
    """
    if mask.shape != teacher_patch_probs.shape[:2] or mask.shape != student_patch_logits.shape[:2]:
        raise ValueError("mask shape does not match patch logits")
    n_masked = int(mask.sum().item())
    if n_masked == 0:
        return student_patch_logits.sum() * 0.0
    ce = _ce_rows(teacher_patch_probs.detach(), student_patch_logits, student_temperature)
    total = (ce * mask.to(ce.dtype)).sum()
    if normalize_by_masked:
        return total / n_masked
    return total


def distill_loss(cls_value: torch.Tensor, mim_value: torch.Tensor) -> torch.Tensor:
    """Arithmetic mean of the global and local objectives."""
    return 0.5 * (cls_value + mim_value)
