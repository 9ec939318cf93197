"""Command-line entry point: gen-data, train, eval, gradcheck, ablate."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import torch

from harmony.baselines import CUMULATIVE_ABLATION_PLAN, run_ablation
from harmony.checkpoint import CheckpointError
from harmony.config import ConfigError, load_train_config
from harmony.data import ShapesDataset, generate_dataset
from harmony.evaluation import (
    build_prompts,
    embed_images,
    encoder_features,
    embed_texts,
    linear_probe,
    retrieval_at_k,
    zero_shot_classify,
)
from harmony.gradcheck import check_composite, check_loss_components
from harmony.trainer import NonFiniteLossError, Trainer

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_BAD_CONFIG = 2
EXIT_NONFINITE = 3


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _apply_common(args: argparse.Namespace) -> None:
    threads = os.environ.get("HARMONY_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    if getattr(args, "deterministic", False):
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _load_config(args: argparse.Namespace):
    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "deterministic", False):
        cfg = dataclasses.replace(cfg, deterministic=True)
    return cfg


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    manifest = generate_dataset(
        out, n_samples=cfg.data.n_samples, seed=cfg.seed,
        noise_level=cfg.data.noise_level, mismatch_fraction=cfg.data.mismatch_fraction,
        image_size=cfg.model.image_size, context_length=cfg.model.context_length)
    print(f"wrote {cfg.data.n_samples} samples to {manifest}")
    return EXIT_OK


def _dataset_for(cfg, args: argparse.Namespace) -> ShapesDataset:
    manifest = cfg.data.manifest
    if not manifest:
        raise ConfigError("config.data.manifest is required for this command")
    path = Path(manifest)
    if not path.is_absolute():
        path = Path(args.config).parent / path
    return ShapesDataset(path)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset = _dataset_for(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, dataset)
    if args.resume:
        trainer.load(args.resume)
    total = cfg.epochs * trainer.steps_per_epoch
    remaining = max(0, total - trainer.step)
    trainer.run(remaining, metrics_path=out / "metrics.jsonl", checkpoint_dir=out)
    trainer.save(out / "final.ckpt")
    print(f"trained {remaining} steps; checkpoint at {out / 'final.ckpt'}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset = _dataset_for(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, dataset)
    if args.resume:
        trainer.load(args.resume)
    n = min(1024, len(dataset))
    images, token_ids, labels = dataset.load_batch(list(range(n)))
    prompts = build_prompts(dataset.tokenizer)
    _, zs = zero_shot_classify(trainer.bundle, images, prompts, labels)
    feats = embed_images(trainer.bundle, images)
    lp = linear_probe(encoder_features(trainer.bundle, images), labels, seed=cfg.seed)
    texts = embed_texts(trainer.bundle, token_ids)
    ks = tuple(k for k in (1, 5, 10) if k <= n)
    retrieval = retrieval_at_k(feats.numpy(), texts.numpy(), ks)
    rows = [("zero_shot", "eval", zs, trainer.step),
            ("linear_probe", "eval", lp, trainer.step)]
    for k, v in retrieval.image_to_text.items():
        rows.append((f"retrieval_i2t_r{k}", "eval", v, trainer.step))
    for k, v in retrieval.text_to_image.items():
        rows.append((f"retrieval_t2i_r{k}", "eval", v, trainer.step))
    with open(out / "eval.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "split", "value", "step"])
        writer.writerows(rows)
    summary = {metric: value for metric, _, value, _ in rows}
    (out / "eval.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_loss = check_loss_components()
    micro_dir = out / "micro_data"
    manifest = generate_dataset(micro_dir, n_samples=8, seed=0, noise_level=0.02,
                                image_size=8, context_length=12)
    composite = check_composite(str(manifest))
    report = {
        "per_loss_max_rel_err": per_loss,
        "composite_max_rel_err": max(composite.values()),
        "composite_by_parameter": composite,
    }
    (out / "gradcheck.json").write_text(json.dumps(report, indent=1))
    worst_loss = max(per_loss.values())
    worst_all = max(worst_loss, report["composite_max_rel_err"])
    for name, err in per_loss.items():
        print(f"loss {name}: max rel err {err:.3e}")
    print(f"composite: max rel err {report['composite_max_rel_err']:.3e}")
    if worst_loss >= 1e-4 or report["composite_max_rel_err"] >= 1e-3:
        return _fail(EXIT_RUNTIME, "gradcheck", f"max relative error {worst_all:.3e}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset = _dataset_for(cfg, args)
    rows = run_ablation(CUMULATIVE_ABLATION_PLAN, cfg, dataset, args.out)
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harmony")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
        "ablate": cmd_ablate,
    }
    for name, fn in specs.items():
        p = sub.add_parser(name)
        if name != "gradcheck":
            p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--resume", default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_common(args)
        return args.fn(args)
    except ConfigError as exc:
        return _fail(EXIT_BAD_CONFIG, "config", str(exc))
    except NonFiniteLossError as exc:
        return _fail(EXIT_NONFINITE, "non_finite_loss", str(exc))
    except (CheckpointError, OSError, ValueError, RuntimeError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", str(exc))


if __name__ == "__main__":
    sys.exit(main())
