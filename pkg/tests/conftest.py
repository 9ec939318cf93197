import dataclasses

import numpy as np
import pytest
import torch

from harmony.config import ModelConfig, TrainConfig
from harmony.data import ShapesDataset, generate_dataset

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    generate_dataset(out, n_samples=64, seed=0, noise_level=0.02)
    return out


@pytest.fixture(scope="session")
def dataset(corpus_dir):
    return ShapesDataset(corpus_dir / "manifest.jsonl")


def small_model_config() -> ModelConfig:
    return ModelConfig(
        image_size=16, patch_size=4, vision_layers=2, vision_dim=32, vision_heads=2,
        text_layers=2, text_dim=32, text_heads=2, context_length=32, vocab_size=64,
        vision_decoder_layers=1, vision_decoder_dim=32, vision_decoder_heads=2,
        text_decoder_layers=1, text_decoder_dim=32, text_decoder_heads=2,
        head_output_dim=64, local_size=8)


@pytest.fixture()
def small_config(corpus_dir):
    cfg = TrainConfig(model=small_model_config(), epochs=2, batch_size=8, seed=0)
    cfg = dataclasses.replace(
        cfg, distill=dataclasses.replace(cfg.distill, local_crops=2))
    cfg.data.manifest = str(corpus_dir / "manifest.jsonl")
    return cfg


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
