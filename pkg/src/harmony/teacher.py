"""EMA teacher maintenance and output centering."""

from __future__ import annotations

import torch
import torch.nn as nn


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float) -> None:
    """theta_bar <- m * theta_bar + (1 - m) * theta, elementwise."""
    if not (0.0 <= momentum <= 1.0):
        raise ValueError(f"momentum {momentum} outside [0, 1]")
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("teacher/student parameter sets differ")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.shape != sp.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(tp.shape)} vs {tuple(sp.shape)}")
        tp.mul_(momentum).add_(sp.detach(), alpha=1.0 - momentum)
    for (name, tb), sb in zip(teacher.named_buffers(), student.buffers()):
        tb.copy_(sb)


def maskclip_momentum(step: int, total_steps: int,
                      start: float = 0.999, end: float = 0.9999) -> float:
    """Linear ramp of the teacher momentum across training."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return start
    return start + (end - start) * step / total_steps


class Centerer:
    """Running-mean subtraction of teacher logits to prevent collapse.

    Each self-distillation path (CLS, MIM, text) owns its own instance.
    """

    def __init__(self, dim: int, momentum: float = 0.9, enabled: bool = True,
                 dtype: torch.dtype = torch.float32):
        self.momentum = momentum
        self.enabled = enabled
        self.center = torch.zeros(dim, dtype=dtype)

    def apply(self, logits: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return logits
        return logits - self.center.to(logits.dtype)

    @torch.no_grad()
    def update(self, logits: torch.Tensor) -> None:
        if not self.enabled:
            return
        batch_mean = logits.detach().reshape(-1, logits.shape[-1]).mean(dim=0)
        self.center = self.momentum * self.center + (1.0 - self.momentum) * batch_mean.to(
            self.center.dtype)
        if not torch.isfinite(self.center).all():
            raise ValueError("teacher center became non-finite")

    def apply_and_update(self, logits: torch.Tensor) -> torch.Tensor:
        out = self.apply(logits)
        self.update(logits)
        return out
