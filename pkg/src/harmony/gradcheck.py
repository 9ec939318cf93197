"""Finite-difference verification of every loss component and the composite."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import torch

from harmony.baselines import maskclip_distill_loss
from harmony.config import ModelConfig, TrainConfig
from harmony.data import ShapesDataset
from harmony.losses.contrastive import hard_infonce, soft_infonce
from harmony.losses.distill import cls_loss, mim_loss, softmax_with_temp
from harmony.losses.reconstruction import reconstruction_loss
from harmony.losses.text import mlm_loss, text_distill_loss
from harmony.rng import stream
from harmony.trainer import Trainer


def finite_difference_grad(f: Callable[[torch.Tensor], torch.Tensor],
                           x: torch.Tensor, eps: float = 1e-5,
                           coords: np.ndarray | None = None) -> torch.Tensor:
    """Central differences of a scalar function at selected flat coordinates."""
    flat = x.detach().clone().reshape(-1)
    if coords is None:
        coords = np.arange(flat.numel())
    grad = torch.zeros(len(coords), dtype=flat.dtype)
    for j, c in enumerate(coords):
        for sign in (1.0, -1.0):
            bumped = flat.clone()
            bumped[c] += sign * eps
            value = f(bumped.reshape(x.shape))
            grad[j] += sign * float(value) / (2 * eps)
    return grad


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor,
                  floor: float = 1e-6) -> float:
    a = analytic.detach().reshape(-1).double()
    n = numeric.detach().reshape(-1).double()
    denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
    return float(((a - n).abs() / denom).max())


def _check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor,
           eps: float = 1e-5) -> float:
    x = x.detach().clone().requires_grad_(True)
    value = f(x)
    (analytic,) = torch.autograd.grad(value, x)
    numeric = finite_difference_grad(f, x)
    return max_rel_error(analytic, numeric.reshape(x.shape))


def check_loss_components(seed: int = 0) -> dict[str, float]:
    """Per-loss FD checks on toy inputs at f64; returns max relative errors."""
    torch.manual_seed(seed)
    dt = torch.float64
    results: dict[str, float] = {}

    raw_v = torch.randn(3, 4, dtype=dt)
    raw_t = torch.randn(3, 4, dtype=dt)

    def norm(x: torch.Tensor) -> torch.Tensor:
        return x / x.norm(dim=1, keepdim=True)

    results["hard"] = _check(lambda x: hard_infonce(norm(x), norm(raw_t), 0.3), raw_v)
    tau0 = torch.tensor(0.3, dtype=dt)
    results["hard_temperature"] = _check(
        lambda s: hard_infonce(norm(raw_v), norm(raw_t), s.reshape(())), tau0.reshape(1))

    targets = torch.softmax(torch.randn(3, 3, dtype=dt), dim=1)
    results["soft"] = _check(
        lambda x: soft_infonce(norm(x), norm(raw_t), targets, targets, 0.3), raw_v)

    k = 4
    teacher = [torch.softmax(torch.randn(2, k, dtype=dt), dim=1) for _ in range(2)]
    student = torch.randn(3, 2, k, dtype=dt)  # 2 globals + 1 local view
    results["cls"] = _check(
        lambda x: cls_loss(teacher, [x[0], x[1], x[2]], 0.1), student)

    teacher_patch = torch.softmax(torch.randn(2, 4, k, dtype=dt), dim=-1)
    mask = torch.tensor([[True, False, True, False], [False, True, False, False]])
    results["mim"] = _check(
        lambda x: mim_loss(teacher_patch, x, mask, 0.1), torch.randn(2, 4, k, dtype=dt))

    target_pix = torch.randn(2, 4, 6, dtype=dt)
    results["reconstruction"] = _check(
        lambda x: reconstruction_loss(x, target_pix, mask), torch.randn(2, 4, 6, dtype=dt))

    tokens = torch.tensor([[2, 5, 6, 3], [2, 7, 4, 3]])
    tmask = torch.tensor([[False, True, True, False], [False, True, False, False]])
    results["mlm"] = _check(
        lambda x: mlm_loss(x, tokens, tmask), torch.randn(2, 4, 8, dtype=dt))

    teacher_tok = torch.softmax(torch.randn(2, 4, k, dtype=dt), dim=-1)
    results["text_distill"] = _check(
        lambda x: text_distill_loss(teacher_tok, x, tmask, 0.1),
        torch.randn(2, 4, k, dtype=dt))

    teacher_emb = torch.randn(2, 4, k, dtype=dt)
    results["maskclip"] = _check(
        lambda x: maskclip_distill_loss(x, teacher_emb, mask),
        torch.randn(2, 4, k, dtype=dt))

    # softmax_with_temp feeds several objectives; check it in isolation too
    results["softmax_with_temp"] = _check(
        lambda x: (softmax_with_temp(x, 0.2) * torch.arange(k, dtype=dt)).sum(),
        torch.randn(k, dtype=dt))
    return results


def micro_train_config(manifest: str, vocab_size: int) -> TrainConfig:
    model = ModelConfig(
        image_size=8, patch_size=4, vision_layers=1, vision_dim=16, vision_heads=2,
        text_layers=1, text_dim=16, text_heads=2, context_length=12,
        vocab_size=vocab_size, vision_decoder_layers=1, vision_decoder_dim=16,
        vision_decoder_heads=2, text_decoder_layers=1, text_decoder_dim=16,
        text_decoder_heads=2, head_output_dim=4, local_size=4)
    cfg = TrainConfig(model=model, batch_size=2, epochs=2, seed=0)
    cfg.data.manifest = manifest
    cfg.distill.local_crops = 2
    return cfg


def _force_nonempty_masks(trainer: Trainer, batch: dict) -> None:
    """Fix the stochastic masks so every objective is active in the FD check."""
    l = trainer.config.model.num_patches
    n = batch["g1"].shape[0]
    for ci in range(2):
        m = np.zeros((n, l), dtype=bool)
        m[:, ci::2] = True   # alternating halves, nonempty for both crops
        batch["mim_masks"][ci] = torch.from_numpy(m)
    tokenizer = trainer.dataset.tokenizer
    ids = batch["token_ids"].numpy()
    tmask = np.stack([~tokenizer.special_positions(row) for row in ids])
    batch["text_mask"] = torch.from_numpy(tmask)
    batch["masked_token_ids"] = torch.from_numpy(
        np.where(tmask, tokenizer.mask_id, ids))


def check_composite(manifest: str, seed: int = 0, coords_per_tensor: int = 3,
                    eps: float = 1e-5) -> dict[str, float]:
    """FD check of the full weighted objective against every parameter tensor."""
    dataset = ShapesDataset(manifest)
    cfg = micro_train_config(manifest, len(dataset.tokenizer))
    trainer = Trainer(cfg, dataset, dtype=torch.float64)
    # pick a step where the soft blend is active
    step = trainer.steps_per_epoch
    sched = trainer.schedules.at(step)
    if sched.alpha_c >= 1.0:
        raise RuntimeError("expected soft blend to be active at the probe step")
    batch = trainer.prepare_batch(step)
    _force_nonempty_masks(trainer, batch)

    def total() -> torch.Tensor:
        return trainer.compute_losses(batch, sched, update_centers=False)["total"]

    loss = total()
    params = [(name, p) for name, p in trainer.bundle.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    rng = stream(seed, "gradcheck")
    results: dict[str, float] = {}
    for (name, p), g in zip(params, grads):
        analytic = torch.zeros_like(p) if g is None else g
        n_coords = min(coords_per_tensor, p.numel())
        coords = rng.choice(p.numel(), size=n_coords, replace=False)
        flat = p.data.reshape(-1)
        numeric = torch.zeros(n_coords, dtype=p.dtype)
        for j, c in enumerate(coords):
            original = float(flat[c])
            for sign in (1.0, -1.0):
                with torch.no_grad():
                    flat[c] = original + sign * eps
                with torch.no_grad():
                    value = total()
                numeric[j] += sign * float(value) / (2 * eps)
            with torch.no_grad():
                flat[c] = original
        analytic_sel = analytic.reshape(-1)[torch.from_numpy(coords)]
        results[name] = max_rel_error(analytic_sel, numeric, floor=1e-4)
    return results
