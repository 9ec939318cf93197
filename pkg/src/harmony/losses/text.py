"""Masked language modeling and text self-distillation losses."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from harmony.losses.distill import _ce_rows


def mlm_loss(vocab_logits: torch.Tensor, original_tokens: torch.Tensor,
             mask: torch.Tensor) -> torch.Tensor:
    """Mean CE over masked positions against the original token ids.

    vocab_logits: (B, C, V); original_tokens, mask: (B, C).
    """
    if vocab_logits.shape[:2] != original_tokens.shape or mask.shape != original_tokens.shape:
        raise ValueError("logits/tokens/mask shapes disagree")
    if original_tokens.max().item() >= vocab_logits.shape[-1]:
        raise ValueError("token id out of vocabulary range")
    if int(mask.sum().item()) == 0:
        return vocab_logits.sum() * 0.0
    flat_logits = vocab_logits[mask]
    flat_targets = original_tokens[mask]
    return F.cross_entropy(flat_logits, flat_targets)


def text_distill_loss(teacher_token_probs: torch.Tensor, student_token_logits: torch.Tensor,
                      mask: torch.Tensor, student_temperature: float) -> torch.Tensor:
    """Mean CE between teacher and student token distributions at masked positions."""
    if mask.shape != teacher_token_probs.shape[:2] or mask.shape != student_token_logits.shape[:2]:
        raise ValueError("mask shape does not match token logits")
    n_masked = int(mask.sum().item())
    if n_masked == 0:
        return student_token_logits.sum() * 0.0
    ce = _ce_rows(teacher_token_probs.detach(), student_token_logits, student_temperature)
    return (ce * mask.to(ce.dtype)).sum() / n_masked
