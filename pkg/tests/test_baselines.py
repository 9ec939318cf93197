import csv
import math

import pytest
import torch

from harmony.baselines import (
    CUMULATIVE_ABLATION_PLAN,
    EmbeddingDecoder,
    MaskClipConfig,
    MaskClipTrainer,
    clip_only_config,
    config_for_objectives,
    maskclip_distill_loss,
    run_ablation,
)
from harmony.config import ConfigError


def test_clip_only_config_disables_everything_else(small_config):
    cfg = clip_only_config(small_config)
    assert cfg.weights.alpha == cfg.weights.beta == 0.0
    assert cfg.weights.gamma == cfg.weights.delta == 0.0
    assert cfg.contrastive.alpha_start == cfg.contrastive.alpha_end == 1.0
    # everything else untouched
    assert cfg.model == small_config.model
    assert cfg.optimizer == small_config.optimizer


def test_maskclip_config_defaults_and_validation():
    mc = MaskClipConfig()
    assert mc.mask_ratio == 0.75
    assert mc.distill_weight == 0.05 and mc.mlm_weight == 0.05
    assert mc.momentum_start == 0.999 and mc.momentum_end == 0.9999
    assert mc.crop_scale == (0.6, 1.0)
    with pytest.raises(ConfigError):
        MaskClipConfig(mask_ratio=1.2)
    with pytest.raises(ConfigError):
        MaskClipConfig(distill_weight=-1.0)


def test_maskclip_distill_loss_uniform_teacher():
    k = 8
    teacher = torch.zeros(2, 4, k)
    student = torch.zeros(2, 4, k)
    mask = torch.ones(2, 4, dtype=torch.bool)
    value = maskclip_distill_loss(student, teacher, mask)
    assert abs(float(value) - math.log(k)) < 1e-5
    with pytest.raises(ValueError):
        maskclip_distill_loss(student, teacher, torch.zeros(2, 4, dtype=torch.bool))


def test_maskclip_distill_only_masked_positions_matter():
    torch.manual_seed(0)
    teacher = torch.randn(1, 4, 8)
    student = torch.randn(1, 4, 8)
    mask = torch.tensor([[True, False, False, False]])
    altered = student.clone()
    altered[0, 1:] += 5.0
    a = maskclip_distill_loss(student, teacher, mask)
    b = maskclip_distill_loss(altered, teacher, mask)
    assert torch.allclose(a, b)


def test_embedding_decoder_restores_full_grid():
    torch.manual_seed(0)
    decoder = EmbeddingDecoder(num_patches=16, dim=32, layers=1, heads=2)
    tokens = torch.randn(2, 5, 32)   # CLS + 4 kept
    kept = torch.stack([torch.arange(4), torch.arange(12, 16)])
    out = decoder(tokens, kept)
    assert out.shape == (2, 16, 32)


def test_maskclip_trainer_step(small_config, dataset):
    trainer = MaskClipTrainer(small_config, dataset)
    assert trainer.config.weights.alpha == 0.0
    assert trainer.config.augment.standard_recipe
    losses = trainer.train_step()
    assert math.isfinite(losses.total)
    # decoder parameters receive gradients through the distillation path
    assert any(p.grad is not None and float(p.grad.abs().sum()) > 0
               for p in trainer.decoder.parameters())


def test_maskclip_momentum_schedule_is_linear(small_config, dataset):
    trainer = MaskClipTrainer(small_config, dataset)
    total = trainer.schedules.total_steps
    assert trainer.schedules.ema_momentum(0) == 0.999
    assert trainer.schedules.ema_momentum(total) == 0.9999
    mid = trainer.schedules.ema_momentum(total // 2)
    assert 0.999 < mid < 0.9999


def test_cumulative_ablation_plan_shape():
    assert len(CUMULATIVE_ABLATION_PLAN) == 7
    assert [row["label"] for row in CUMULATIVE_ABLATION_PLAN] == [
        "CLIP", "+cls_mim_distill", "+soft_targets", "+reconstruction", "+mlm", "+text_distill", "=full"]
    sizes = [len(row["objectives"]) for row in CUMULATIVE_ABLATION_PLAN]
    assert sizes == sorted(sizes)    # cumulative additions


def test_config_for_objectives(small_config):
    clip = config_for_objectives(small_config, [])
    assert clip.weights.alpha == 0.0 and clip.contrastive.alpha_end == 1.0
    full = config_for_objectives(
        small_config, ["distill", "soft", "reconstruction", "mlm", "text_distill"])
    assert full.weights == small_config.weights
    assert full.contrastive.alpha_end == small_config.contrastive.alpha_end


def test_run_ablation_emits_complete_csv(small_config, dataset, tmp_path):
    import dataclasses
    cfg = dataclasses.replace(small_config, epochs=1)
    rows = run_ablation(CUMULATIVE_ABLATION_PLAN[:3], cfg, dataset, tmp_path, eval_samples=32)
    assert len(rows) == 3
    with open(tmp_path / "results.csv") as f:
        parsed = list(csv.DictReader(f))
    assert [r["label"] for r in parsed] == ["CLIP", "+cls_mim_distill", "+soft_targets"]
    for r in parsed:
        assert float(r["zero_shot"]) >= 0.0
        assert float(r["time_s"]) > 0.0
        assert float(r["peak_mem_mb"]) > 0.0
    assert (tmp_path / "plan.json").exists()


def test_run_ablation_marks_failures(small_config, dataset, tmp_path):
    plan = [{"label": "broken", "objectives": ["distill"]}]
    import dataclasses
    bad = dataclasses.replace(
        small_config, model=dataclasses.replace(small_config.model, vocab_size=8))
    rows = run_ablation(plan, bad, dataset, tmp_path)
    assert str(rows[0]["zero_shot"]).startswith("FAILED")
