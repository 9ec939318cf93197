"""Text transformer and the vocabulary decoder."""

from __future__ import annotations

import torch
import torch.nn as nn

from harmony.models.blocks import Block


class TextTransformer(nn.Module):
    """Bidirectional token transformer over fixed-length caption ids.

    The pooled sentence embedding for the contrastive path is taken at the
    end-of-sequence token position.
    """

    def __init__(self, vocab_size: int, context_length: int, layers: int, dim: int, heads: int,
                 eos_id: int = 3):
        super().__init__()
        self.vocab_size = vocab_size
        self.context_length = context_length
        self.eos_id = eos_id
        self.token_embed = nn.Embedding(vocab_size, dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, context_length, dim))
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.normal_(self.token_embed.weight, std=0.02)

    def forward(self, token_ids: torch.Tensor) -> dict[str, torch.Tensor]:
        """token_ids: (B, C) ints. Returns {"tokens": (B, C, d), "pooled": (B, d)}."""
        if token_ids.shape[1] != self.context_length:
            raise ValueError(
                f"expected context length {self.context_length}, got {token_ids.shape[1]}"
            )
        if token_ids.max().item() >= self.vocab_size or token_ids.min().item() < 0:
            raise ValueError("token id out of vocabulary range")
        x = self.token_embed(token_ids) + self.pos_embed.to(self.token_embed.weight.dtype)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        eos_mask = token_ids == self.eos_id
        # first EOS per row; rows without one fall back to the final position
        has_eos = eos_mask.any(dim=1)
        eos_pos = torch.where(
            has_eos,
            eos_mask.float().argmax(dim=1),
            torch.full_like(has_eos, self.context_length - 1, dtype=torch.long),
        )
        pooled = x[torch.arange(x.shape[0], device=x.device), eos_pos]
        return {"tokens": x, "pooled": pooled}


class TextDecoder(nn.Module):
    """Maps per-token embeddings to vocabulary logits."""

    def __init__(self, vocab_size: int, context_length: int, encoder_dim: int,
                 layers: int, dim: int, heads: int):
        super().__init__()
        self.embed = nn.Linear(encoder_dim, dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, context_length, dim))
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, vocab_size)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, token_embeddings: torch.Tensor) -> torch.Tensor:
        x = self.embed(token_embeddings) + self.pos_embed.to(token_embeddings.dtype)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))
