"""Training loop: composite objective, optimizer, schedules, checkpointing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from harmony.augment import make_crops
from harmony.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from harmony.config import TrainConfig, train_config_to_dict
from harmony.data import ShapesDataset
from harmony.losses.contrastive import hard_infonce, soft_infonce, soft_targets
from harmony.losses.distill import cls_loss, distill_loss, mim_loss, softmax_with_temp
from harmony.losses.reconstruction import normalize_patch_targets, reconstruction_loss
from harmony.losses.text import mlm_loss, text_distill_loss
from harmony.masking import blockwise_mask, clip_image_masking, mae_mask, sample_mim_ratio
from harmony.models.bundle import EncoderBundle
from harmony.models.vision import patchify
from harmony.rng import derive_seed, stream
from harmony.schedules import Schedules, ScheduleValues
from harmony.teacher import Centerer, ema_update
from harmony.tokenizer import mask_caption


class NonFiniteLossError(RuntimeError):
    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite loss in component {component!r}: {value}")
        self.component = component


@dataclass
class LossBundle:
    """Per-step loss components and the weighted composite."""

    hard: float
    soft: float
    contrastive: float
    cls: float
    mim: float
    distill: float
    reconstruction: float
    mlm: float
    text_distill: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def check_finite(losses: dict[str, torch.Tensor]) -> None:
    for name, value in losses.items():
        v = float(value.detach())
        if v != v or abs(v) == float("inf"):
            raise NonFiniteLossError(name, v)


def clip_gradients(params: list[torch.nn.Parameter], max_norm: float = 3.0) -> float:
    """Scales gradients so the global norm is at most max_norm; returns the factor."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 1.0
    total = torch.sqrt(sum((g.detach() ** 2).sum() for g in grads))
    norm = float(total.item())
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for g in grads:
        g.detach().mul_(factor)
    return factor


class Trainer:
    """Single-threaded deterministic training over the synthetic corpus."""

    def __init__(self, config: TrainConfig, dataset: ShapesDataset,
                 dtype: torch.dtype = torch.float32):
        self.config = config
        self.dataset = dataset
        self.dtype = dtype
        if dataset.tokenizer is not None and len(dataset.tokenizer) > config.model.vocab_size:
            raise ValueError(
                f"dataset vocabulary ({len(dataset.tokenizer)}) exceeds configured "
                f"vocab_size ({config.model.vocab_size})")
        torch.manual_seed(derive_seed(config.seed, "init"))
        self.bundle = EncoderBundle(config.model, eos_id=dataset.tokenizer.eos_id)
        if dtype != torch.float32:
            self.bundle = self.bundle.to(dtype)
        self.steps_per_epoch = max(1, len(dataset) // config.batch_size)
        self.schedules = Schedules(config, self.steps_per_epoch)
        k = config.model.head_output_dim
        self.centerers = {
            "cls": Centerer(k, config.distill.center_momentum, config.distill.centering, dtype),
            "mim": Centerer(k, config.distill.center_momentum, config.distill.centering, dtype),
            "text": Centerer(k, config.distill.center_momentum, config.distill.centering, dtype),
        }
        self._param_names, params = zip(*(
            (name, p) for name, p in self.bundle.named_parameters() if p.requires_grad))
        decay, no_decay = [], []
        for name, p in zip(self._param_names, params):
            # biases, norms, embeddings-of-one-token, and the temperature skip decay
            if p.ndim <= 1 or name.endswith("log_logit_scale"):
                no_decay.append(p)
            else:
                decay.append(p)
        opt = config.optimizer
        self.optimizer = torch.optim.AdamW(
            [
                {"params": decay, "weight_decay": opt.weight_decay_start},
                {"params": no_decay, "weight_decay": 0.0},
            ],
            lr=0.0, betas=(opt.beta1, opt.beta2), eps=opt.eps,
        )
        self.step = 0

    def trainable_parameters(self) -> list[torch.nn.Parameter]:
        return self.bundle.student_parameters()

    # ------------------------------------------------------------------ batches

    def prepare_batch(self, step: int) -> dict[str, Any]:
        """Deterministically assemble crops, masks, and captions for a step."""
        cfg = self.config
        epoch = step // self.steps_per_epoch
        pos = step % self.steps_per_epoch
        order = self.dataset.epoch_order(cfg.seed, epoch)
        idx = order[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
        images, token_ids, class_ids = self.dataset.load_batch(idx)
        sched = self.schedules.at(step)
        n = len(idx)
        model = cfg.model
        l_global = model.num_patches
        grid = (model.grid_size, model.grid_size)
        g1_list, g2_list, locals_list = [], [], []
        mim_masks = [np.zeros((n, l_global), dtype=bool) for _ in range(2)]
        mae_masks = [np.zeros((n, l_global), dtype=bool) for _ in range(2)]
        text_ids = token_ids.numpy()
        masked_text = np.empty_like(text_ids)
        text_mask = np.zeros_like(text_ids, dtype=bool)
        for row, sample in enumerate(idx):
            sid = int(sample)
            aug_rng = stream(cfg.seed, "aug", epoch, sid)
            crops = make_crops(
                images[row].permute(1, 2, 0).numpy(), cfg.augment, aug_rng,
                global_size=model.image_size, local_size=model.local_size,
                n_locals=cfg.distill.local_crops)
            g1_list.append(crops.globals[0])
            g2_list.append(crops.globals[1])
            locals_list.append(crops.locals)
            for ci in range(2):
                mim_rng = stream(cfg.seed, "mim", epoch, sid, ci)
                ratio = sample_mim_ratio(
                    mim_rng, cfg.distill.mim_ratio_choices,
                    cfg.distill.mim_ratio_variation, cfg.distill.mim_ratio_max)
                if ratio > 0:
                    mim_masks[ci][row] = blockwise_mask(grid, ratio, mim_rng).mask
                mae_rng = stream(cfg.seed, "mae", epoch, sid, ci)
                mae_masks[ci][row] = mae_mask(l_global, sched.mask_ratio, mae_rng).mask
            text_rng = stream(cfg.seed, "text", epoch, sid)
            masked_row, plan = mask_caption(
                text_ids[row], cfg.text.mask_prob, text_rng, self.dataset.tokenizer)
            masked_text[row] = masked_row
            text_mask[row] = plan.mask
        clip_mask = None
        if cfg.contrastive.masking == "random_50":
            clip_mask = np.stack([
                clip_image_masking(l_global, "random_50",
                                   stream(cfg.seed, "clipmask", epoch, int(s))).mask
                for s in idx])

        def to_t(arrs: list[np.ndarray]) -> torch.Tensor:
            return torch.from_numpy(np.stack(arrs)).permute(0, 3, 1, 2).to(self.dtype)

        batch: dict[str, Any] = {
            "step": step,
            "class_ids": class_ids,
            "g1": to_t(g1_list),
            "g2": to_t(g2_list),
            "locals": [to_t([s[i] for s in locals_list])
                       for i in range(cfg.distill.local_crops)],
            "mim_masks": [torch.from_numpy(m) for m in mim_masks],
            "mae_masks": [torch.from_numpy(m) for m in mae_masks],
            "token_ids": token_ids,
            "masked_token_ids": torch.from_numpy(masked_text),
            "text_mask": torch.from_numpy(text_mask),
            "clip_mask": torch.from_numpy(clip_mask) if clip_mask is not None else None,
        }
        return batch

    # ------------------------------------------------------------------ losses

    def compute_losses(self, batch: dict[str, Any], sched: ScheduleValues,
                       update_centers: bool = True) -> dict[str, torch.Tensor]:
        cfg = self.config
        w = cfg.weights
        bundle = self.bundle
        zero = torch.zeros((), dtype=self.dtype)
        losses: dict[str, torch.Tensor] = {}

        # -- contrastive (always on)
        g1 = batch["g1"]
        if cfg.contrastive.masking == "none":
            v_tokens = bundle.student_vision(g1)
        elif cfg.contrastive.masking == "attentive_50":
            with torch.no_grad():
                attn = bundle.teacher_vision(g1, return_cls_attention=True)["cls_attention"]
            masks = np.stack([
                clip_image_masking(attn.shape[1], "attentive_50",
                                   stream(cfg.seed, "clipmask", sched.step, i),
                                   cls_attention=attn[i].numpy()).mask
                for i in range(attn.shape[0])])
            v_tokens = bundle.student_vision(g1, torch.from_numpy(masks), mode="drop")
        else:
            v_tokens = bundle.student_vision(g1, batch["clip_mask"], mode="drop")
        v = bundle.vision_contrastive_head(v_tokens["tokens"][:, 0])
        t = bundle.text_contrastive_head(bundle.student_text(batch["token_ids"])["pooled"])
        tau = bundle.temperature()
        hard = hard_infonce(v, t, tau)
        alpha_c = sched.alpha_c
        if alpha_c < 1.0:
            with torch.no_grad():
                v_bar = bundle.teacher_vision_contrastive_head(
                    bundle.teacher_vision(g1)["tokens"][:, 0])
                t_bar = bundle.teacher_text_contrastive_head(
                    bundle.teacher_text(batch["token_ids"])["pooled"])
            a_v, a_t = soft_targets(v_bar, t_bar, cfg.contrastive.teacher_temperature,
                                    cfg.contrastive.double_softmax)
            soft = soft_infonce(v, t, a_v, a_t, tau)
        else:
            soft = zero
        losses["hard"] = hard
        losses["soft"] = soft
        losses["contrastive"] = alpha_c * hard + (1.0 - alpha_c) * soft

        # -- feature self-distillation
        if w.alpha > 0:
            d = cfg.distill
            globals_ = [batch["g1"], batch["g2"]]
            mim_masks = batch["mim_masks"]
            teacher_inputs, student_inputs = [], []
            for gi, g in enumerate(globals_):
                if d.masked_view_to_teacher:
                    teacher_inputs.append((g, mim_masks[gi], "substitute"))
                    student_inputs.append((g, None, "full"))
                else:
                    teacher_inputs.append((g, None, "full"))
                    student_inputs.append((g, mim_masks[gi], "substitute"))
            teacher_cls_probs, teacher_patch_probs = [], []
            teacher_cls_raw, teacher_patch_raw = [], []
            with torch.no_grad():
                for g, m, mode in teacher_inputs:
                    tokens = bundle.teacher_vision(g, m, mode=mode)["tokens"]
                    logits = bundle.teacher_vision_distill_head(tokens)
                    teacher_cls_raw.append(logits[:, 0])
                    teacher_patch_raw.append(logits[:, 1:])
                    teacher_cls_probs.append(softmax_with_temp(
                        self.centerers["cls"].apply(logits[:, 0]), d.teacher_cls_temperature))
                    teacher_patch_probs.append(softmax_with_temp(
                        self.centerers["mim"].apply(logits[:, 1:]), sched.teacher_mim_temp))
            student_cls_logits, student_patch_logits = [], []
            for g, m, mode in student_inputs:
                tokens = bundle.student_vision(g, m, mode=mode)["tokens"]
                logits = bundle.vision_distill_head(tokens)
                student_cls_logits.append(logits[:, 0])
                student_patch_logits.append(logits[:, 1:])
            if batch["locals"]:
                stacked = torch.cat(batch["locals"], dim=0)
                local_tokens = bundle.student_vision(stacked)["tokens"][:, 0]
                local_logits = bundle.vision_distill_head(local_tokens)
                student_cls_logits.extend(local_logits.chunk(len(batch["locals"]), dim=0))
            l_cls = cls_loss(teacher_cls_probs, student_cls_logits, d.student_temperature)
            mim_terms = [
                mim_loss(teacher_patch_probs[i], student_patch_logits[i], mim_masks[i],
                         d.student_temperature, d.normalize_by_masked)
                for i in range(2)
            ]
            l_mim = sum(mim_terms) / len(mim_terms)
            if update_centers:
                self.centerers["cls"].update(torch.cat(teacher_cls_raw, dim=0))
                self.centerers["mim"].update(torch.cat(teacher_patch_raw, dim=1))
            losses["cls"] = l_cls
            losses["mim"] = l_mim
            losses["distill"] = distill_loss(l_cls, l_mim)
        else:
            losses["cls"] = zero
            losses["mim"] = zero
            losses["distill"] = zero

        # -- pixel reconstruction
        if w.beta > 0:
            r = cfg.reconstruction
            views = [batch["g1"], batch["g2"]] if r.reconstruct_both_globals else [batch["g1"]]
            total_r = zero
            for vi, view in enumerate(views):
                mask = batch["mae_masks"][vi]
                enc = bundle.student_vision(view, mask, mode="drop")
                preds = bundle.vision_decoder(enc["tokens"], enc["kept_indices"])
                targets = normalize_patch_targets(
                    patchify(view, cfg.model.patch_size), r.normalize_targets)
                total_r = total_r + reconstruction_loss(preds, targets, mask, r.normalize_by)
            losses["reconstruction"] = total_r
        else:
            losses["reconstruction"] = zero

        # -- text objectives
        if w.gamma > 0 or w.delta > 0:
            t_cfg = cfg.text
            swap = t_cfg.masked_view_to_teacher
            student_ids = batch["token_ids"] if swap else batch["masked_token_ids"]
            teacher_ids = batch["masked_token_ids"] if swap else batch["token_ids"]
            student_tokens = bundle.student_text(student_ids)["tokens"]
            if w.gamma > 0:
                vocab_logits = bundle.text_decoder(student_tokens)
                losses["mlm"] = mlm_loss(vocab_logits, batch["token_ids"], batch["text_mask"])
            else:
                losses["mlm"] = zero
            if w.delta > 0:
                with torch.no_grad():
                    teacher_tokens = bundle.teacher_text(teacher_ids)["tokens"]
                    teacher_logits = bundle.teacher_text_distill_head(teacher_tokens)
                    teacher_probs = softmax_with_temp(
                        self.centerers["text"].apply(teacher_logits),
                        t_cfg.teacher_temperature)
                student_logits = bundle.text_distill_head(student_tokens)
                losses["text_distill"] = text_distill_loss(
                    teacher_probs, student_logits, batch["text_mask"],
                    t_cfg.student_temperature)
                if update_centers:
                    self.centerers["text"].update(teacher_logits.reshape(-1, teacher_logits.shape[-1]))
            else:
                losses["text_distill"] = zero
        else:
            losses["mlm"] = zero
            losses["text_distill"] = zero

        losses["total"] = (
            losses["contrastive"]
            + w.alpha * losses["distill"]
            + w.beta * losses["reconstruction"]
            + w.gamma * losses["mlm"]
            + w.delta * losses["text_distill"]
        )
        check_finite(losses)
        return losses

    # ------------------------------------------------------------------ stepping

    def train_step(self, batch: dict[str, Any] | None = None) -> LossBundle:
        cfg = self.config
        sched = self.schedules.at(self.step)
        if batch is None:
            batch = self.prepare_batch(self.step)
        losses = self.compute_losses(batch, sched, update_centers=True)
        self.optimizer.zero_grad(set_to_none=True)
        losses["total"].backward()
        clip_gradients(self.trainable_parameters(), cfg.optimizer.clip_grad_norm)
        for group in self.optimizer.param_groups:
            group["lr"] = sched.lr
        self.optimizer.param_groups[0]["weight_decay"] = sched.weight_decay
        self.optimizer.step()
        with torch.no_grad():
            for teacher, student in self.bundle.teacher_student_module_pairs():
                ema_update(teacher, student, sched.ema_momentum)
        self.step += 1
        scalars = {k: float(v.detach()) if torch.is_tensor(v) else float(v)
                   for k, v in losses.items()}
        return LossBundle(
            hard=scalars["hard"], soft=scalars["soft"],
            contrastive=scalars["contrastive"],
            cls=scalars["cls"], mim=scalars["mim"],
            distill=scalars["distill"],
            reconstruction=scalars["reconstruction"],
            mlm=scalars["mlm"], text_distill=scalars["text_distill"],
            total=scalars["total"],
        )

    def run(self, num_steps: int, metrics_path: str | Path | None = None,
            checkpoint_dir: str | Path | None = None) -> list[LossBundle]:
        history: list[LossBundle] = []
        sink = open(metrics_path, "a") if metrics_path else None
        try:
            ckpt_every = self.config.checkpoint_every_epochs * self.steps_per_epoch
            for _ in range(num_steps):
                sched = self.schedules.at(self.step)
                bundle = self.train_step()
                history.append(bundle)
                if sink:
                    record = bundle.to_dict()
                    record.update({
                        "step": sched.step, "epoch": sched.epoch, "lr": sched.lr,
                        "alpha_c": sched.alpha_c, "momentum": sched.ema_momentum,
                        "teacher_temp": sched.teacher_mim_temp,
                        "mask_ratio": sched.mask_ratio,
                        "weight_decay": sched.weight_decay,
                    })
                    sink.write(json.dumps(record) + "\n")
                if checkpoint_dir and ckpt_every > 0 and self.step % ckpt_every == 0:
                    self.save(Path(checkpoint_dir) / f"step{self.step:08d}.ckpt")
        finally:
            if sink:
                sink.close()
        return history

    # ------------------------------------------------------------------ persistence

    def save(self, path: str | Path) -> None:
        tensors: dict[str, np.ndarray] = {}
        for name, value in self.bundle.state_dict().items():
            tensors[f"model/{name}"] = value.detach().cpu().numpy()
        for cname, c in self.centerers.items():
            tensors[f"center/{cname}"] = c.center.numpy()
        opt_steps: dict[str, int] = {}
        name_by_param = {id(p): n for n, p in self.bundle.named_parameters()}
        for group in self.optimizer.param_groups:
            for p in group["params"]:
                state = self.optimizer.state.get(p)
                pname = name_by_param.get(id(p))
                if not state or pname is None:
                    continue
                tensors[f"opt/{pname}/exp_avg"] = state["exp_avg"].numpy()
                tensors[f"opt/{pname}/exp_avg_sq"] = state["exp_avg_sq"].numpy()
                opt_steps[pname] = int(state["step"])
        header = {
            "config": train_config_to_dict(self.config),
            "step": self.step,
            "opt_steps": opt_steps,
            "torch_rng": torch.get_rng_state().numpy().tobytes().hex(),
        }
        save_checkpoint(path, header, tensors)

    def load(self, path: str | Path) -> None:
        header, tensors = load_checkpoint(path)
        state = {}
        for name, arr in tensors.items():
            if name.startswith("model/"):
                state[name[len("model/"):]] = torch.from_numpy(arr)
        self.bundle.load_state_dict(state, strict=True)
        for cname, c in self.centerers.items():
            key = f"center/{cname}"
            if key in tensors:
                c.center = torch.from_numpy(tensors[key])
        params_by_name = dict(self.bundle.named_parameters())
        for pname, step_count in header.get("opt_steps", {}).items():
            p = params_by_name.get(pname)
            if p is None:
                raise CheckpointError(f"unknown optimizer parameter {pname!r}")
            self.optimizer.state[p] = {
                "step": torch.tensor(float(step_count)),
                "exp_avg": torch.from_numpy(tensors[f"opt/{pname}/exp_avg"]),
                "exp_avg_sq": torch.from_numpy(tensors[f"opt/{pname}/exp_avg_sq"]),
            }
        self.step = int(header["step"])
        rng_hex = header.get("torch_rng")
        if rng_hex:
            torch.set_rng_state(torch.frombuffer(
                bytearray.fromhex(rng_hex), dtype=torch.uint8).clone())
