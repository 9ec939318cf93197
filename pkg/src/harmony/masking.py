"""Mask-plan generation for the image objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MaskPlan:
    """Boolean mask over patch positions plus its generation policy."""

    mask: np.ndarray          # bool, length L (or grid-flattened)
    ratio: float
    style: str

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def mae_mask(num_patches: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly random subset of exactly round(ratio * L) patches, drop semantics."""
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio {ratio} outside (0, 1)")
    n_mask = int(round(ratio * num_patches))
    if n_mask >= num_patches:
        raise ValueError("mask ratio leaves no patches to encode")
    mask = np.zeros(num_patches, dtype=bool)
    idx = rng.choice(num_patches, size=n_mask, replace=False)
    mask[idx] = True
    return MaskPlan(mask=mask, ratio=ratio, style="random_removal")


def blockwise_mask(grid: tuple[int, int], target_ratio: float,
                   rng: np.random.Generator) -> MaskPlan:
    """Contiguous rectangular blocks on the patch grid until the target count."""
    gh, gw = grid
    if gh <= 0 or gw <= 0:
        raise ValueError("empty patch grid")
    if target_ratio > 0.5:
        raise ValueError(f"block mask ratio {target_ratio} exceeds the 0.5 cap")
    num = gh * gw
    target = int(target_ratio * num)
    mask = np.zeros((gh, gw), dtype=bool)
    count = 0
    while count < target:
        remaining = target - count
        # rectangle whose area never overshoots the remaining budget
        h = int(rng.integers(1, min(gh, remaining) + 1))
        max_w = max(1, remaining // h)
        w = int(rng.integers(1, min(gw, max_w) + 1))
        top = int(rng.integers(0, gh - h + 1))
        left = int(rng.integers(0, gw - w + 1))
        mask[top:top + h, left:left + w] = True
        count = int(mask.sum())
    return MaskPlan(mask=mask.reshape(-1), ratio=target_ratio, style="block_wise")


def sample_mim_ratio(rng: np.random.Generator, choices: tuple[float, ...] = (0.0, 0.3),
                     variation: float = 0.2, max_ratio: float = 0.5) -> float:
    """Prediction ratio drawn from the base choices plus a uniform variation."""
    base = float(rng.choice(np.asarray(choices)))
    r = base + float(rng.uniform(-variation, variation))
    return float(np.clip(r, 0.0, max_ratio))


def clip_image_masking(num_patches: int, policy: str, rng: np.random.Generator,
                       cls_attention: np.ndarray | None = None) -> MaskPlan:
    """Optional 50% patch dropping for the contrastive image path.

    random_50 drops a uniform half; attentive_50 keeps the patches with the
    highest teacher CLS attention.
    """
    if policy == "none":
        return MaskPlan(mask=np.zeros(num_patches, dtype=bool), ratio=0.0, style="none")
    n_drop = num_patches // 2
    if policy == "random_50":
        mask = np.zeros(num_patches, dtype=bool)
        mask[rng.choice(num_patches, size=n_drop, replace=False)] = True
        return MaskPlan(mask=mask, ratio=0.5, style="random_50")
    if policy == "attentive_50":
        if cls_attention is None:
            raise ValueError("attentive masking requires teacher CLS attention")
        attention = np.asarray(cls_attention, dtype=np.float64)
        if attention.shape != (num_patches,):
            raise ValueError("attention length does not match patch count")
        keep = np.argsort(-attention, kind="stable")[: num_patches - n_drop]
        mask = np.ones(num_patches, dtype=bool)
        mask[keep] = False
        return MaskPlan(mask=mask, ratio=0.5, style="attentive_50")
    raise ValueError(f"unknown contrastive masking policy {policy!r}")
