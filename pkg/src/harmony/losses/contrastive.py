"""Image-text contrastive losses: hard InfoNCE, EMA soft targets, and the blend."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def _check_embeddings(v: torch.Tensor, t: torch.Tensor) -> None:
    if v.ndim != 2 or t.ndim != 2 or v.shape != t.shape:
        raise ValueError(f"expected matching N x d matrices, got {tuple(v.shape)} and {tuple(t.shape)}")
    if v.shape[0] == 0:
        raise ValueError("empty batch")


def hard_infonce(v: torch.Tensor, t: torch.Tensor, temperature: torch.Tensor | float) -> torch.Tensor:
    """Symmetric InfoNCE with identity targets, both directions summed.

    Each direction is the mean over rows of the cross-entropy between the
    pairing identity and the temperature-scaled similarity softmax.
    """
    _check_embeddings(v, t)
    logits = v @ t.t() / temperature
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite similarity logits")
    labels = torch.arange(v.shape[0], device=v.device)
    return F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels)


def soft_targets(v_teacher: torch.Tensor, t_teacher: torch.Tensor,
                 teacher_temperature: float, double_softmax: bool = False
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    """Row-stochastic target matrices from detached teacher embeddings.

    double_softmax applies a second softmax on top of the tempered one;
    the default is a single tempered softmax.
"""
    _check_embeddings(v_teacher, t_teacher)
    if teacher_temperature <= 0:
        raise ValueError("teacher temperature must be positive")
    with torch.no_grad():
        sims = v_teacher.detach() @ t_teacher.detach().t() / teacher_temperature
        a_v = sims.softmax(dim=1)
        a_t = sims.t().softmax(dim=1)
        if double_softmax:
            a_v = a_v.softmax(dim=1)
            a_t = a_t.softmax(dim=1)
    return a_v, a_t


def _soft_ce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return -(targets * logits.log_softmax(dim=1)).sum(dim=1).mean()


def soft_infonce(v: torch.Tensor, t: torch.Tensor,
                 a_v: torch.Tensor, a_t: torch.Tensor,
                 temperature: torch.Tensor | float) -> torch.Tensor:
    """Cross-entropy against soft target rows, both directions summed."""
    _check_embeddings(v, t)
    for a in (a_v, a_t):
        row_sums = a.sum(dim=1)
        if torch.any((row_sums - 1.0).abs() > 1e-5) or torch.any(a < 0):
            raise ValueError("soft targets must be row-stochastic")
    logits = v @ t.t() / temperature
    return _soft_ce(logits, a_v) + _soft_ce(logits.t(), a_t)


def contrastive_loss(v: torch.Tensor, t: torch.Tensor,
                     v_teacher: torch.Tensor | None, t_teacher: torch.Tensor | None,
                     alpha_c: float, temperature: torch.Tensor | float,
                     teacher_temperature: float,
                     double_softmax: bool = False) -> torch.Tensor:
    """Convex blend of the hard and soft losses; alpha_c=1 is hard-only."""
    if not (0.0 <= alpha_c <= 1.0):
        raise ValueError(f"alpha_c {alpha_c} outside [0, 1]")
    hard = hard_infonce(v, t, temperature)
    if alpha_c == 1.0:
        return hard
    if v_teacher is None or t_teacher is None:
        raise ValueError("soft blend requires teacher embeddings")
    a_v, a_t = soft_targets(v_teacher, t_teacher, teacher_temperature, double_softmax)
    soft = soft_infonce(v, t, a_v, a_t, temperature)
    return alpha_c * hard + (1.0 - alpha_c) * soft
