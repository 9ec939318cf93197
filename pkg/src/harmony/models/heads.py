"""Projection heads: single-linear contrastive, MLP distillation."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ContrastiveHead(nn.Module):
    """Single linear projection followed by L2 row normalization."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, out_dim, bias=False)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        x = self.proj(pooled)
        norms = x.norm(dim=-1)
        if torch.any(norms < 1e-12):
            raise ValueError("zero embedding before normalization (dead encoder output)")
        return x / norms.unsqueeze(-1)


class DistillHead(nn.Module):
    """MLP head producing K-dim logits for the self-distillation objectives.

    The last layer uses fixed-unit-norm direction vectors (weight rows are
    renormalized in the forward pass, magnitudes frozen to 1), with the
    input likewise normalized.
    """

    def __init__(self, dim: int, out_dim: int, hidden: int = 256, bottleneck: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, bottleneck),
        )
        self.last_layer = nn.Parameter(torch.empty(out_dim, bottleneck))
        nn.init.trunc_normal_(self.last_layer, std=0.02)

    @property
    def last_layer_directions(self) -> torch.Tensor:
        return F.normalize(self.last_layer, dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.normalize(self.mlp(x), dim=-1, eps=1e-8)
        return x @ self.last_layer_directions.to(x.dtype).t()
