"""CLIP-only and masked-distillation CLIP baselines, plus the ablation runner."""

from __future__ import annotations

import csv
import dataclasses
import json
import resource
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
import torch.nn as nn

from harmony.config import (
    AugmentRecipe,
    ConfigError,
    ContrastiveConfig,
    LossWeights,
    TrainConfig,
)
from harmony.data import ShapesDataset
from harmony.evaluation import (
    build_prompts,
    encoder_features,
    linear_probe,
    zero_shot_classify,
)
from harmony.losses.contrastive import hard_infonce
from harmony.losses.distill import cls_loss, softmax_with_temp
from harmony.losses.text import mlm_loss
from harmony.models.blocks import Block
from harmony.schedules import Schedules
from harmony.teacher import Centerer, maskclip_momentum
from harmony.trainer import Trainer, check_finite


def clip_only_config(base: TrainConfig) -> TrainConfig:
    """Harmony config degenerated to the contrastive objective alone."""
    return dataclasses.replace(
        base,
        weights=LossWeights(alpha=0.0, beta=0.0, gamma=0.0, delta=0.0),
        contrastive=dataclasses.replace(base.contrastive, alpha_start=1.0, alpha_end=1.0),
    )


@dataclass
class MaskClipConfig:
    decoder_layers: int = 1
    decoder_heads: int = 16
    mask_ratio: float = 0.75
    distill_weight: float = 0.05
    mlm_weight: float = 0.05
    momentum_start: float = 0.999
    momentum_end: float = 0.9999
    crop_scale: tuple[float, float] = (0.6, 1.0)
    use_ibot_head: bool = True
    use_cls_objective: bool = False
    centering: bool = True
    student_temperature: float = 1.0
    teacher_temperature: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.mask_ratio < 1.0):
            raise ConfigError("mask_ratio must lie in (0, 1)")
        if self.distill_weight < 0 or self.mlm_weight < 0:
            raise ConfigError("loss weights must be >= 0")


def maskclip_distill_loss(student_masked_emb: torch.Tensor, teacher_full_emb: torch.Tensor,
                          mask: torch.Tensor, student_temperature: float = 1.0,
                          teacher_temperature: float = 1.0) -> torch.Tensor:
    """Mean CE between teacher and student patch distributions at masked positions."""
    if mask.shape != student_masked_emb.shape[:2] or mask.shape != teacher_full_emb.shape[:2]:
        raise ValueError("mask shape does not match embeddings")
    n_masked = int(mask.sum().item())
    if n_masked == 0:
        raise ValueError("masked self-distillation requires a nonempty mask")
    teacher_probs = softmax_with_temp(teacher_full_emb.detach(), teacher_temperature)
    log_p = (student_masked_emb / student_temperature).log_softmax(dim=-1)
    ce = -(teacher_probs * log_p).sum(dim=-1)
    return (ce * mask.to(ce.dtype)).sum() / n_masked


class EmbeddingDecoder(nn.Module):
    """Transformer decoder that restores dropped tokens at their positions."""

    def __init__(self, num_patches: int, dim: int, layers: int, heads: int):
        super().__init__()
        self.num_patches = num_patches
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + num_patches, dim))
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def forward(self, tokens: torch.Tensor, kept_indices: torch.Tensor) -> torch.Tensor:
        b, _, d = tokens.shape
        full = self.mask_token.to(tokens.dtype).expand(b, self.num_patches, -1).clone()
        full = full.scatter(1, kept_indices.unsqueeze(-1).expand(-1, -1, d), tokens[:, 1:])
        x = torch.cat([tokens[:, :1], full], dim=1) + self.pos_embed.to(tokens.dtype)
        for block in self.blocks:
            x = block(x)
        return self.norm(x)[:, 1:]


class MaskClipSchedules(Schedules):
    def __init__(self, config: TrainConfig, steps_per_epoch: int, mc: MaskClipConfig):
        super().__init__(config, steps_per_epoch)
        self.mc = mc

    def ema_momentum(self, step: int) -> float:
        return maskclip_momentum(min(step, self.total_steps), self.total_steps,
                                 self.mc.momentum_start, self.mc.momentum_end)


class MaskClipTrainer(Trainer):
    """Contrastive + masked self-distillation + MLM over the shared encoder stack."""

    def __init__(self, config: TrainConfig, dataset: ShapesDataset,
                 maskclip: MaskClipConfig | None = None,
                 dtype: torch.dtype = torch.float32):
        maskclip = maskclip or MaskClipConfig()
        config = dataclasses.replace(
            config,
            weights=LossWeights(alpha=0.0, beta=0.0, gamma=maskclip.mlm_weight, delta=0.0),
            contrastive=dataclasses.replace(
                config.contrastive, alpha_start=1.0, alpha_end=1.0),
            augment=AugmentRecipe(standard_recipe=True, standard_scale=maskclip.crop_scale,
                                  flip_p=0.0),
            reconstruction=dataclasses.replace(
                config.reconstruction, mask_ratio=maskclip.mask_ratio),
            distill=dataclasses.replace(config.distill, centering=maskclip.centering),
        )
        super().__init__(config, dataset, dtype=dtype)
        self.maskclip = maskclip
        self.schedules = MaskClipSchedules(config, self.steps_per_epoch, maskclip)
        torch.manual_seed(self.config.seed + 7)
        self.decoder = EmbeddingDecoder(
            config.model.num_patches, config.model.vision_dim,
            maskclip.decoder_layers, maskclip.decoder_heads).to(dtype)
        self.optimizer.add_param_group(
            {"params": list(self.decoder.parameters()), "weight_decay": 0.0})
        dim = (config.model.head_output_dim if maskclip.use_ibot_head
               else config.model.vision_dim)
        self.centerers["mim"] = Centerer(
            dim, config.distill.center_momentum, maskclip.centering, dtype)

    def trainable_parameters(self):
        return self.bundle.student_parameters() + list(self.decoder.parameters())

    def compute_losses(self, batch: dict[str, Any], sched, update_centers: bool = True
                       ) -> dict[str, torch.Tensor]:
        cfg = self.config
        mc = self.maskclip
        bundle = self.bundle
        zero = torch.zeros((), dtype=self.dtype)
        g1 = batch["g1"]
        v = bundle.vision_contrastive_head(bundle.student_vision(g1)["tokens"][:, 0])
        t = bundle.text_contrastive_head(bundle.student_text(batch["token_ids"])["pooled"])
        losses: dict[str, torch.Tensor] = {
            "hard": hard_infonce(v, t, bundle.temperature()), "soft": zero,
            "cls": zero, "mim": zero, "distill": zero, "reconstruction": zero,
            "text_distill": zero,
        }
        losses["contrastive"] = losses["hard"]

        mask = batch["mae_masks"][0]
        enc = bundle.student_vision(g1, mask, mode="drop")
        student_emb = self.decoder(enc["tokens"], enc["kept_indices"])
        with torch.no_grad():
            teacher_raw = bundle.teacher_vision(g1)["tokens"][:, 1:]
            if mc.use_ibot_head:
                teacher_raw = bundle.teacher_vision_distill_head(teacher_raw)
        if mc.use_ibot_head:
            student_emb = bundle.vision_distill_head(student_emb)
        losses["maskdist"] = maskclip_distill_loss(
            student_emb, self.centerers["mim"].apply(teacher_raw), mask,
            mc.student_temperature, mc.teacher_temperature)
        if update_centers:
            self.centerers["mim"].update(teacher_raw)

        if mc.use_cls_objective:
            d = cfg.distill
            with torch.no_grad():
                teacher_probs = []
                for g in (batch["g1"], batch["g2"]):
                    logits = bundle.teacher_vision_distill_head(
                        bundle.teacher_vision(g)["tokens"][:, 0])
                    teacher_probs.append(softmax_with_temp(
                        self.centerers["cls"].apply(logits), d.teacher_cls_temperature))
                    if update_centers:
                        self.centerers["cls"].update(logits)
            student_logits = [
                bundle.vision_distill_head(bundle.student_vision(g)["tokens"][:, 0])
                for g in (batch["g1"], batch["g2"])
            ]
            losses["cls"] = cls_loss(teacher_probs, student_logits, d.student_temperature)

        student_tokens = bundle.student_text(batch["masked_token_ids"])["tokens"]
        losses["mlm"] = mlm_loss(bundle.text_decoder(student_tokens),
                                 batch["token_ids"], batch["text_mask"])

        losses["total"] = (
            losses["contrastive"]
            + mc.distill_weight * losses["maskdist"]
            + mc.mlm_weight * losses["mlm"]
            + losses["cls"]
        )
        check_finite(losses)
        return losses


CUMULATIVE_ABLATION_PLAN = [
    {"label": "CLIP", "objectives": []},
    {"label": "+cls_mim_distill", "objectives": ["distill"]},
    {"label": "+soft_targets", "objectives": ["distill", "soft"]},
    {"label": "+reconstruction", "objectives": ["distill", "soft", "reconstruction"]},
    {"label": "+mlm", "objectives": ["distill", "soft", "reconstruction", "mlm"]},
    {"label": "+text_distill",
     "objectives": ["distill", "soft", "reconstruction", "mlm", "text_distill"]},
    {"label": "=full",
     "objectives": ["distill", "soft", "reconstruction", "mlm", "text_distill"]},
]


def config_for_objectives(base: TrainConfig, objectives: list[str]) -> TrainConfig:
    weights = LossWeights(
        alpha=1.0 if "distill" in objectives else 0.0,
        beta=1.0 if "reconstruction" in objectives else 0.0,
        gamma=1.0 if "mlm" in objectives else 0.0,
        delta=1.0 if "text_distill" in objectives else 0.0,
    )
    contrastive = base.contrastive if "soft" in objectives else dataclasses.replace(
        base.contrastive, alpha_start=1.0, alpha_end=1.0)
    return dataclasses.replace(base, weights=weights, contrastive=contrastive)


def run_ablation(plan: list[dict[str, Any]], base_config: TrainConfig,
                 dataset: ShapesDataset, out_dir: str | Path,
                 eval_samples: int = 256) -> list[dict[str, Any]]:
    """One training+eval run per row under a shared seed; emits results.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict[str, Any]] = []
    prompts = build_prompts(dataset.tokenizer)
    eval_idx = list(range(min(eval_samples, len(dataset))))
    images, _, labels = dataset.load_batch(eval_idx)
    for row_plan in plan:
        label = row_plan["label"]
        start = time.monotonic()
        row: dict[str, Any] = {"label": label}
        try:
            cfg = config_for_objectives(base_config, list(row_plan["objectives"]))
            trainer = Trainer(cfg, dataset)
            trainer.run(cfg.epochs * trainer.steps_per_epoch,
                        metrics_path=out / f"{label.replace('/', '_')}.metrics.jsonl")
            _, zs = zero_shot_classify(trainer.bundle, images, prompts, labels)
            feats = encoder_features(trainer.bundle, images)
            lp = linear_probe(feats, labels, seed=cfg.seed)
            row.update({"zero_shot": round(zs, 4), "linear_probe": round(lp, 4)})
        except Exception as exc:  # noqa: BLE001 - partial tables carry failure markers
            row.update({"zero_shot": f"FAILED: {exc}", "linear_probe": ""})
        row["time_s"] = round(time.monotonic() - start, 2)
        row["peak_mem_mb"] = round(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024, 1)
        rows.append(row)
    csv_path = out / "results.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["label", "zero_shot", "linear_probe", "time_s", "peak_mem_mb"])
        writer.writeheader()
        writer.writerows(rows)
    (out / "plan.json").write_text(json.dumps(plan, indent=1))
    return rows
