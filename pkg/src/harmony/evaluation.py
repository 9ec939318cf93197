"""Zero-shot classification, linear probing, and retrieval metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from harmony.data import COLORS, SHAPES, class_name
from harmony.models.bundle import EncoderBundle
from harmony.tokenizer import Tokenizer

PROMPT_TEMPLATES = (
    "a photo of a {color} {shape}",
    "an image of a {color} {shape}",
)


@dataclass
class RetrievalResult:
    image_to_text: dict[int, float]
    text_to_image: dict[int, float]


def build_prompts(tokenizer: Tokenizer, templates: tuple[str, ...] = PROMPT_TEMPLATES
                  ) -> list[torch.Tensor]:
    """Tokenized prompt set per class, ordered by class id."""
    prompts: list[torch.Tensor] = []
    for cid in range(len(SHAPES) * len(COLORS)):
        shape, color = class_name(cid)
        ids = [tokenizer.encode(t.format(color=color, shape=shape)) for t in templates]
        prompts.append(torch.from_numpy(np.stack(ids)))
    return prompts


@torch.no_grad()
def embed_images(bundle: EncoderBundle, images: torch.Tensor,
                 batch_size: int = 256) -> torch.Tensor:
    out = []
    for start in range(0, images.shape[0], batch_size):
        tokens = bundle.student_vision(images[start:start + batch_size])["tokens"]
        out.append(bundle.vision_contrastive_head(tokens[:, 0]))
    return torch.cat(out)


@torch.no_grad()
def encoder_features(bundle: EncoderBundle, images: torch.Tensor,
                     batch_size: int = 256) -> torch.Tensor:
    """Frozen class-token features from the image encoder (no projection)."""
    out = []
    for start in range(0, images.shape[0], batch_size):
        tokens = bundle.student_vision(images[start:start + batch_size])["tokens"]
        out.append(tokens[:, 0])
    return torch.cat(out)


@torch.no_grad()
def embed_texts(bundle: EncoderBundle, token_ids: torch.Tensor,
                batch_size: int = 256) -> torch.Tensor:
    out = []
    for start in range(0, token_ids.shape[0], batch_size):
        pooled = bundle.student_text(token_ids[start:start + batch_size])["pooled"]
        out.append(bundle.text_contrastive_head(pooled))
    return torch.cat(out)


@torch.no_grad()
def class_embeddings(bundle: EncoderBundle, prompts: list[torch.Tensor]) -> torch.Tensor:
    """Mean of per-class prompt embeddings, re-normalized."""
    rows = []
    for ids in prompts:
        if ids.shape[0] == 0:
            raise ValueError("empty prompt set for a class")
        emb = embed_texts(bundle, ids).mean(dim=0)
        rows.append(F.normalize(emb, dim=0))
    return torch.stack(rows)


@torch.no_grad()
def zero_shot_classify(bundle: EncoderBundle, images: torch.Tensor,
                       prompts: list[torch.Tensor],
                       labels: torch.Tensor | None = None
                       ) -> tuple[torch.Tensor, float | None]:
    """Cosine-argmax prediction against prompt-ensemble class embeddings."""
    image_embs = embed_images(bundle, images)
    classes = class_embeddings(bundle, prompts)
    sims = image_embs @ classes.t()
    predictions = sims.argmax(dim=1)
    accuracy = None
    if labels is not None:
        accuracy = float((predictions == labels).float().mean())
    return predictions, accuracy


def linear_probe(features: torch.Tensor, labels: torch.Tensor,
                 lr_grid: tuple[float, ...] = (1e-2, 1e-1, 1.0),
                 epochs: int = 500, val_fraction: float = 0.25,
                 seed: int = 0) -> float:
    """Best validation accuracy over a grid of linear classifiers.

    Features are standardized with train-split statistics; one linear layer
    per learning rate is trained full-batch on the frozen features (the
    encoder is never touched).
    """
    if labels.unique().numel() < 2:
        raise ValueError("need at least two classes for a probe")
    features = features.detach()
    n = features.shape[0]
    n_classes = int(labels.max().item()) + 1
    gen = torch.Generator().manual_seed(seed)
    order = torch.randperm(n, generator=gen)
    n_val = max(1, int(n * val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    mean = features[train_idx].mean(dim=0)
    std = features[train_idx].std(dim=0).clamp_min(1e-6)
    features = (features - mean) / std
    heads = [torch.nn.Linear(features.shape[1], n_classes) for _ in lr_grid]
    torch.manual_seed(seed)
    for head in heads:
        torch.nn.init.zeros_(head.weight)
        torch.nn.init.zeros_(head.bias)
    optimizers = [torch.optim.SGD(h.parameters(), lr=lr, momentum=0.9) for h, lr in
                  zip(heads, lr_grid)]
    x_train, y_train = features[train_idx], labels[train_idx]
    for _ in range(epochs):
        for head, opt in zip(heads, optimizers):
            opt.zero_grad()
            loss = F.cross_entropy(head(x_train), y_train)
            loss.backward()
            opt.step()
    best = 0.0
    with torch.no_grad():
        for head in heads:
            preds = head(features[val_idx]).argmax(dim=1)
            best = max(best, float((preds == labels[val_idx]).float().mean()))
    return best


def _recall_from_ranks(ranks: np.ndarray, ks: tuple[int, ...]) -> dict[int, float]:
    return {k: float((ranks < k).mean()) for k in ks}


def _pair_ranks(sims: np.ndarray) -> np.ndarray:
    """Rank of the diagonal entry per row; ties broken by lower column index."""
    n = sims.shape[0]
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = sims[i]
        target = row[i]
        higher = int((row > target).sum())
        tied_before = int(((row == target) & (np.arange(n) < i)).sum())
        ranks[i] = higher + tied_before
    return ranks


def retrieval_at_k(image_embs: np.ndarray | torch.Tensor,
                   text_embs: np.ndarray | torch.Tensor,
                   ks: tuple[int, ...] = (1, 5, 10)) -> RetrievalResult:
    """R@k for paired rows in both directions, via full similarity ranking."""
    if isinstance(image_embs, torch.Tensor):
        image_embs = image_embs.detach().numpy()
    if isinstance(text_embs, torch.Tensor):
        text_embs = text_embs.detach().numpy()
    n = image_embs.shape[0]
    if any(k > n for k in ks):
        raise ValueError(f"k larger than corpus size {n}")
    sims = image_embs @ text_embs.T
    return RetrievalResult(
        image_to_text=_recall_from_ranks(_pair_ranks(sims), ks),
        text_to_image=_recall_from_ranks(_pair_ranks(sims.T), ks),
    )


def retrieval_at_k_topk(image_embs: np.ndarray, text_embs: np.ndarray,
                        ks: tuple[int, ...] = (1, 5, 10)) -> RetrievalResult:
    """Same metric via top-k selection instead of full ranking (cross-check)."""
    n = image_embs.shape[0]
    if any(k > n for k in ks):
        raise ValueError(f"k larger than corpus size {n}")
    sims = image_embs @ text_embs.T

    def recalls(s: np.ndarray) -> dict[int, float]:
        out = {}
        for k in ks:
            hits = 0
            for i in range(n):
                # stable selection: sort by (-sim, index) and take the first k
                idx = np.lexsort((np.arange(n), -s[i]))[:k]
                hits += int(i in idx)
            out[k] = hits / n
        return out

    return RetrievalResult(image_to_text=recalls(sims), text_to_image=recalls(sims.T))
