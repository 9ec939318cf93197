from harmony.losses.contrastive import (
    contrastive_loss,
    hard_infonce,
    soft_infonce,
    soft_targets,
)
from harmony.losses.distill import (
    cls_loss,
    distill_loss,
    mim_loss,
    softmax_with_temp,
)
from harmony.losses.reconstruction import (
    normalize_patch_targets,
    reconstruction_loss,
)
from harmony.losses.text import mlm_loss, text_distill_loss

__all__ = [
    "cls_loss",
    "contrastive_loss",
    "distill_loss",
    "hard_infonce",
    "mim_loss",
    "mlm_loss",
    "normalize_patch_targets",
    "reconstruction_loss",
    "soft_infonce",
    "soft_targets",
    "softmax_with_temp",
    "text_distill_loss",
]
