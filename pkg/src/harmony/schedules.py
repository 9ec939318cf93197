"""Time-indexed training schedules: lr, weight decay, blend weights, temps."""

from __future__ import annotations

import math
from dataclasses import dataclass

from harmony.config import TrainConfig


def cosine_schedule(t: float, total: float, start: float, end: float) -> float:
    """Half-cosine ramp from start (t=0) to end (t=total); clamps past total."""
    if total <= 0 or t >= total:
        return end
    if t <= 0:
        return start
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * t / total))


def linear_schedule(t: float, total: float, start: float, end: float) -> float:
    if total <= 0 or t >= total:
        return end
    if t <= 0:
        return start
    return start + (end - start) * t / total


@dataclass
class ScheduleValues:
    step: int
    epoch: float
    lr: float
    weight_decay: float
    alpha_c: float
    teacher_mim_temp: float
    ema_momentum: float
    mask_ratio: float

    def validate(self) -> None:
        for name, v in vars(self).items():
            if not math.isfinite(v):
                raise ValueError(f"schedule value {name} is non-finite")
        if self.lr < 0:
            raise ValueError("negative learning rate")


class Schedules:
    """Computes every scheduled quantity from the flat step index."""

    def __init__(self, config: TrainConfig, steps_per_epoch: int):
        self.config = config
        self.steps_per_epoch = max(1, steps_per_epoch)
        self.total_steps = config.epochs * self.steps_per_epoch
        opt = config.optimizer
        self.peak_lr = opt.base_lr
        if opt.lr_batch_scaling:
            self.peak_lr = opt.base_lr * config.batch_size / 256.0

    def _epoch(self, step: int) -> float:
        return step / self.steps_per_epoch

    def lr(self, step: int) -> float:
        opt = self.config.optimizer
        warmup_steps = opt.warmup_epochs * self.steps_per_epoch
        if warmup_steps > 0 and step < warmup_steps:
            return self.peak_lr * step / warmup_steps
        return cosine_schedule(
            step - warmup_steps, max(1.0, self.total_steps - warmup_steps),
            self.peak_lr, opt.final_lr)

    def weight_decay(self, step: int) -> float:
        opt = self.config.optimizer
        return cosine_schedule(step, self.total_steps,
                               opt.weight_decay_start, opt.weight_decay_end)

    def alpha_c(self, step: int) -> float:
        c = self.config.contrastive
        return cosine_schedule(self._epoch(step), c.alpha_epochs, c.alpha_start, c.alpha_end)

    def teacher_mim_temp(self, step: int) -> float:
        d = self.config.distill
        return linear_schedule(self._epoch(step), d.teacher_mim_temp_epochs,
                               d.teacher_mim_temp_start, d.teacher_mim_temp_end)

    def ema_momentum(self, step: int) -> float:
        base = self.config.teacher_momentum
        if self.config.momentum_schedule == "constant":
            return base
        return cosine_schedule(step, self.total_steps, base, 1.0)

    def mask_ratio(self, step: int) -> float:
        r = self.config.reconstruction
        if r.ratio_schedule == "constant":
            return r.mask_ratio
        return linear_schedule(self._epoch(step), r.ratio_epochs, r.ratio_start, r.ratio_end)

    def at(self, step: int) -> ScheduleValues:
        values = ScheduleValues(
            step=step,
            epoch=self._epoch(step),
            lr=self.lr(step),
            weight_decay=self.weight_decay(step),
            alpha_c=self.alpha_c(step),
            teacher_mim_temp=self.teacher_mim_temp(step),
            ema_momentum=self.ema_momentum(step),
            mask_ratio=self.mask_ratio(step),
        )
        values.validate()
        return values
