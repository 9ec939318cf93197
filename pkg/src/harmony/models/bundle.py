"""The six networks plus projection heads, with student/teacher pairing."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from harmony.config import ModelConfig
from harmony.models.heads import ContrastiveHead, DistillHead
from harmony.models.text import TextDecoder, TextTransformer
from harmony.models.vision import VisionDecoder, VisionTransformer

MAX_LOGIT_SCALE = 100.0


class EncoderBundle(nn.Module):
    """Student/teacher vision and text encoders, decoders, and all heads.

    Teacher copies are parameter-shape-identical to their students, start as
    exact copies, and never receive gradients. The CLS and MIM objectives
    share one distillation head per side.
    """

    def __init__(self, config: ModelConfig, eos_id: int = 3):
        super().__init__()
        self.config = config

        def make_vision() -> VisionTransformer:
            return VisionTransformer(
                config.image_size, config.patch_size,
                config.vision_layers, config.vision_dim, config.vision_heads,
            )

        def make_text() -> TextTransformer:
            return TextTransformer(
                config.vocab_size, config.context_length,
                config.text_layers, config.text_dim, config.text_heads, eos_id=eos_id,
            )

        self.student_vision = make_vision()
        self.student_text = make_text()
        self.vision_contrastive_head = ContrastiveHead(config.vision_dim, config.contrastive_dim)
        self.text_contrastive_head = ContrastiveHead(config.text_dim, config.contrastive_dim)
        self.vision_distill_head = DistillHead(config.vision_dim, config.head_output_dim)
        self.text_distill_head = DistillHead(config.text_dim, config.head_output_dim)

        self.vision_decoder = VisionDecoder(
            config.num_patches, config.vision_dim,
            config.vision_decoder_layers, config.vision_decoder_dim,
            config.vision_decoder_heads, config.patch_size,
        )
        self.text_decoder = TextDecoder(
            config.vocab_size, config.context_length, config.text_dim,
            config.text_decoder_layers, config.text_decoder_dim, config.text_decoder_heads,
        )

        self.teacher_vision = make_vision()
        self.teacher_text = make_text()
        self.teacher_vision_contrastive_head = ContrastiveHead(
            config.vision_dim, config.contrastive_dim)
        self.teacher_text_contrastive_head = ContrastiveHead(
            config.text_dim, config.contrastive_dim)
        self.teacher_vision_distill_head = DistillHead(config.vision_dim, config.head_output_dim)
        self.teacher_text_distill_head = DistillHead(config.text_dim, config.head_output_dim)

        # learnable contrastive temperature, stored on a log scale (init 0.07)
        self.log_logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / 0.07)))

        self.copy_student_to_teacher()
        for p in self.teacher_parameters():
            p.requires_grad_(False)

    def teacher_student_module_pairs(self) -> list[tuple[nn.Module, nn.Module]]:
        return [
            (self.teacher_vision, self.student_vision),
            (self.teacher_text, self.student_text),
            (self.teacher_vision_contrastive_head, self.vision_contrastive_head),
            (self.teacher_text_contrastive_head, self.text_contrastive_head),
            (self.teacher_vision_distill_head, self.vision_distill_head),
            (self.teacher_text_distill_head, self.text_distill_head),
        ]

    def teacher_parameters(self) -> list[nn.Parameter]:
        return [p for t, _ in self.teacher_student_module_pairs() for p in t.parameters()]

    def student_parameters(self) -> list[nn.Parameter]:
        teacher_ids = {id(p) for p in self.teacher_parameters()}
        return [p for p in self.parameters() if id(p) not in teacher_ids]

    @torch.no_grad()
    def copy_student_to_teacher(self) -> None:
        for teacher, student in self.teacher_student_module_pairs():
            teacher.load_state_dict(student.state_dict())

    def temperature(self) -> torch.Tensor:
        scale = self.log_logit_scale.exp().clamp(max=MAX_LOGIT_SCALE)
        return 1.0 / scale
