"""MAE-style pixel reconstruction loss."""

from __future__ import annotations

import torch


def normalize_patch_targets(patch_pixels: torch.Tensor,
                            mode: str = "per_patch_standardize") -> torch.Tensor:
    """Per-patch target normalization; patch_pixels: (..., L, P)."""
    if patch_pixels.shape[-1] == 0:
        raise ValueError("empty patch")
    if mode == "per_patch_standardize":
        mean = patch_pixels.mean(dim=-1, keepdim=True)
        var = patch_pixels.var(dim=-1, keepdim=True, unbiased=False)
        return (patch_pixels - mean) / torch.sqrt(var + 1e-6)
    if mode == "unit_l2":
        norms = patch_pixels.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return patch_pixels / norms
    raise ValueError(f"unknown normalization mode {mode!r}")


def reconstruction_loss(predictions: torch.Tensor, targets: torch.Tensor,
                        mask: torch.Tensor, normalize_by: str = "all_patches"
                        ) -> torch.Tensor:
    """Masked per-patch MSE; predictions/targets (B, L, P), mask (B, L) bool.

    Pixel errors are averaged within each patch; patch errors are summed at
    masked positions and divided by L (default) or by the masked count.
    """
    if predictions.shape != targets.shape:
        raise ValueError(
            f"prediction shape {tuple(predictions.shape)} != target {tuple(targets.shape)}")
    if mask.shape != predictions.shape[:2]:
        raise ValueError("mask shape does not match patches")
    per_patch = ((predictions - targets) ** 2).mean(dim=-1)
    masked_sum = (per_patch * mask.to(per_patch.dtype)).sum(dim=1)
    if normalize_by == "all_patches":
        return (masked_sum / predictions.shape[1]).mean()
    if normalize_by == "masked_count":
        counts = mask.sum(dim=1).clamp_min(1)
        return (masked_sum / counts.to(per_patch.dtype)).mean()
    raise ValueError(f"unknown normalization {normalize_by!r}")
