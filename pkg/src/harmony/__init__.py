"""Desk-scale joint self-/weakly-supervised vision-language pretraining.

Five simultaneous objectives over tiny transformers: contrastive learning
with EMA soft targets, global/local feature self-distillation, pixel
reconstruction, masked language modeling, and text self-distillation.
"""

from harmony.config import (
    AugmentRecipe,
    ContrastiveConfig,
    DataConfig,
    DistillConfig,
    LossWeights,
    ModelConfig,
    OptimizerConfig,
    ReconstructionConfig,
    TextConfig,
    TrainConfig,
    ConfigError,
)

__all__ = [
    "AugmentRecipe",
    "ConfigError",
    "ContrastiveConfig",
    "DataConfig",
    "DistillConfig",
    "LossWeights",
    "ModelConfig",
    "OptimizerConfig",
    "ReconstructionConfig",
    "TextConfig",
    "TrainConfig",
]

__version__ = "0.1.0"
