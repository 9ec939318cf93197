"""Configuration dataclasses and JSON loading/validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a config document fails validation."""


@dataclass
class ModelConfig:
    image_size: int = 32
    patch_size: int = 8
    vision_layers: int = 4
    vision_dim: int = 64
    vision_heads: int = 4
    text_layers: int = 4
    text_dim: int = 64
    text_heads: int = 4
    context_length: int = 32
    vocab_size: int = 64
    vision_decoder_layers: int = 2
    vision_decoder_dim: int = 64
    vision_decoder_heads: int = 4
    text_decoder_layers: int = 2
    text_decoder_dim: int = 64
    text_decoder_heads: int = 4
    head_output_dim: int = 256       # K for the distillation heads
    contrastive_dim: int = 0         # 0 -> defaults to encoder embedding dim
    local_size: int = 16             # side length of local crops

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.local_size % self.patch_size != 0:
            raise ConfigError(
                f"local_size {self.local_size} not divisible by patch_size {self.patch_size}"
            )
        for name in (
            "vision_layers", "vision_dim", "vision_heads",
            "text_layers", "text_dim", "text_heads",
            "context_length", "vocab_size",
            "vision_decoder_layers", "vision_decoder_dim", "vision_decoder_heads",
            "text_decoder_layers", "text_decoder_dim", "text_decoder_heads",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.head_output_dim < 2:
            raise ConfigError("head_output_dim must be >= 2")
        if self.contrastive_dim == 0:
            self.contrastive_dim = self.vision_dim

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size


@dataclass
class ContrastiveConfig:
    init_temperature: float = 0.07   # learnable, stored as a log-scale scalar
    teacher_temperature: float = 0.1
    alpha_start: float = 1.0
    alpha_end: float = 0.2
    alpha_epochs: float = 10.0       # cosine ramp duration for the hard/soft blend
    masking: str = "none"            # none | random_50 | attentive_50
    double_softmax: bool = False     # True applies a second softmax on the tempered targets

    def __post_init__(self) -> None:
        if self.init_temperature <= 0 or self.teacher_temperature <= 0:
            raise ConfigError("temperatures must be positive")
        if not (0.0 <= self.alpha_end <= self.alpha_start <= 1.0):
            raise ConfigError("need 0 <= alpha_end <= alpha_start <= 1")
        if self.masking not in ("none", "random_50", "attentive_50"):
            raise ConfigError(f"unknown contrastive masking policy {self.masking!r}")


@dataclass
class DistillConfig:
    student_temperature: float = 0.04
    teacher_cls_temperature: float = 0.04
    teacher_mim_temp_start: float = 0.04
    teacher_mim_temp_end: float = 0.07
    teacher_mim_temp_epochs: float = 10.0
    global_crops: int = 2
    local_crops: int = 8
    mim_ratio_choices: tuple[float, ...] = (0.0, 0.3)
    mim_ratio_variation: float = 0.2
    mim_ratio_max: float = 0.5
    centering: bool = True
    center_momentum: float = 0.9
    normalize_by_masked: bool = True   # False sums over masked positions without dividing
    masked_view_to_teacher: bool = False  # True swaps which side sees the masked view

    def __post_init__(self) -> None:
        if min(self.student_temperature, self.teacher_cls_temperature,
               self.teacher_mim_temp_start, self.teacher_mim_temp_end) <= 0:
            raise ConfigError("distillation temperatures must be positive")
        if self.global_crops < 2:
            raise ConfigError("need at least 2 global crops")


@dataclass
class ReconstructionConfig:
    mask_ratio: float = 0.75
    normalize_targets: str = "per_patch_standardize"  # or unit_l2
    reconstruct_both_globals: bool = True
    ratio_schedule: str = "constant"   # constant | linear
    ratio_start: float = 0.65
    ratio_end: float = 0.85
    ratio_epochs: float = 15.0
    normalize_by: str = "all_patches"  # divide by every patch, or "masked_count"

    def __post_init__(self) -> None:
        if not (0.0 < self.mask_ratio < 1.0):
            raise ConfigError("mask_ratio must lie in (0, 1)")
        if self.normalize_targets not in ("per_patch_standardize", "unit_l2"):
            raise ConfigError(f"unknown target normalization {self.normalize_targets!r}")
        if self.ratio_schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown ratio schedule {self.ratio_schedule!r}")
        if self.normalize_by not in ("all_patches", "masked_count"):
            raise ConfigError(f"unknown loss normalization {self.normalize_by!r}")


@dataclass
class TextConfig:
    mask_prob: float = 0.2
    student_temperature: float = 0.04
    teacher_temperature: float = 0.04
    masked_view_to_teacher: bool = False  # True swaps which side sees the masked caption

    def __post_init__(self) -> None:
        if not (0.0 <= self.mask_prob <= 1.0):
            raise ConfigError("mask_prob must lie in [0, 1]")


@dataclass
class AugmentRecipe:
    global_scale: tuple[float, float] = (0.32, 1.0)
    local_scale: tuple[float, float] = (0.05, 0.32)
    flip_p: float = 0.5
    jitter_p: float = 0.8
    jitter_strengths: tuple[float, float, float, float] = (0.4, 0.4, 0.2, 0.1)
    grayscale_p: float = 0.2
    blur_p_global1: float = 1.0
    blur_p_global2: float = 0.1
    blur_p_local: float = 0.5
    solarize_p: float = 0.2
    solarize_threshold: int = 128
    standard_recipe: bool = False      # crop scale [0.4, 1] + flip only
    standard_scale: tuple[float, float] = (0.4, 1.0)

    def __post_init__(self) -> None:
        for lo, hi in (self.global_scale, self.local_scale, self.standard_scale):
            if not (0.0 < lo <= hi <= 1.0):
                raise ConfigError("crop scale ranges must lie within (0, 1]")
        for p in (self.flip_p, self.jitter_p, self.grayscale_p, self.blur_p_global1,
                  self.blur_p_global2, self.blur_p_local, self.solarize_p):
            if not (0.0 <= p <= 1.0):
                raise ConfigError("probabilities must lie in [0, 1]")


@dataclass
class OptimizerConfig:
    base_lr: float = 5e-4             # scaled by batch_size / 256 at startup
    final_lr: float = 1e-6
    warmup_epochs: float = 3.0
    weight_decay_start: float = 0.04
    weight_decay_end: float = 0.4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    clip_grad_norm: float = 3.0
    lr_batch_scaling: bool = True

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if not (0.0 < self.beta2 < 1.0):
            raise ConfigError("beta2 must lie in (0, 1)")


@dataclass
class LossWeights:
    alpha: float = 1.0   # feature self-distillation
    beta: float = 1.0    # pixel reconstruction
    gamma: float = 1.0   # masked language modeling
    delta: float = 1.0   # text self-distillation

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "delta"):
            v = getattr(self, name)
            if not (v >= 0.0 and v == v and abs(v) != float("inf")):
                raise ConfigError(f"loss weight {name} must be finite and >= 0")


@dataclass
class DataConfig:
    manifest: str = ""
    n_samples: int = 2000
    noise_level: float = 0.05
    mismatch_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not (0.0 <= self.mismatch_fraction <= 1.0):
            raise ConfigError("mismatch_fraction must lie in [0, 1]")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    text: TextConfig = field(default_factory=TextConfig)
    augment: AugmentRecipe = field(default_factory=AugmentRecipe)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    deterministic: bool = False
    teacher_momentum: float = 0.996
    momentum_schedule: str = "cosine_to_one"   # or constant
    checkpoint_every_epochs: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (0.0 <= self.teacher_momentum <= 1.0):
            raise ConfigError("teacher_momentum must lie in [0, 1]")
        if self.momentum_schedule not in ("constant", "cosine_to_one"):
            raise ConfigError(f"unknown momentum schedule {self.momentum_schedule!r}")


_NESTED = {
    "model": ModelConfig,
    "contrastive": ContrastiveConfig,
    "distill": DistillConfig,
    "reconstruction": ReconstructionConfig,
    "text": TextConfig,
    "augment": AugmentRecipe,
    "optimizer": OptimizerConfig,
    "weights": LossWeights,
    "data": DataConfig,
}


def _build(cls: type, doc: dict[str, Any]) -> Any:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        fld = next(f for f in dataclasses.fields(cls) if f.name == key)
        if isinstance(value, list) and "tuple" in str(fld.type):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def train_config_from_dict(doc: dict[str, Any]) -> TrainConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    doc = dict(doc)
    kwargs: dict[str, Any] = {}
    for key, cls in _NESTED.items():
        if key in doc:
            sub = doc.pop(key)
            if not isinstance(sub, dict):
                raise ConfigError(f"section {key!r} must be an object")
            kwargs[key] = _build(cls, sub)
    top = _build(TrainConfig, doc)
    return dataclasses.replace(top, **kwargs)


def load_train_config(path: str | Path) -> TrainConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return train_config_from_dict(doc)


def train_config_to_dict(cfg: TrainConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)
