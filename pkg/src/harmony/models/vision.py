"""Vision transformer with maskable input and the pixel decoder."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from harmony.models.blocks import Block


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, L, patch_size**2 * C) in row-major patch order."""
    b, c, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, c, gh, patch_size, gw, patch_size)
    x = x.permute(0, 2, 4, 3, 5, 1)  # b gh gw ph pw c
    return x.reshape(b, gh * gw, patch_size * patch_size * c)


def unpatchify(patches: torch.Tensor, patch_size: int, grid: tuple[int, int]) -> torch.Tensor:
    b, l, d = patches.shape
    gh, gw = grid
    c = d // (patch_size * patch_size)
    x = patches.reshape(b, gh, gw, patch_size, patch_size, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, gh * patch_size, gw * patch_size)


class VisionTransformer(nn.Module):
    """ViT over flattened-patch linear embeddings with three input modes.

    full: every patch is embedded; substitute: masked positions are replaced
    with a learned mask token after embedding; drop: masked positions are
    removed from the sequence entirely (the encoder never sees them).
    """

    def __init__(self, image_size: int, patch_size: int, layers: int, dim: int, heads: int,
                 channels: int = 3):
        super().__init__()
        self.image_size = image_size
        self.patch_size = patch_size
        self.dim = dim
        self.grid = image_size // patch_size
        self.num_patches = self.grid * self.grid
        self.patch_embed = nn.Linear(patch_size * patch_size * channels, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + self.num_patches, dim))
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def _pos_for_grid(self, gh: int, gw: int) -> torch.Tensor:
        cls_pos = self.pos_embed[:, :1]
        patch_pos = self.pos_embed[:, 1:]
        if gh == self.grid and gw == self.grid:
            return torch.cat([cls_pos, patch_pos], dim=1)
        grid_pos = patch_pos.reshape(1, self.grid, self.grid, self.dim).permute(0, 3, 1, 2)
        grid_pos = F.interpolate(grid_pos, size=(gh, gw), mode="bilinear", align_corners=False)
        grid_pos = grid_pos.permute(0, 2, 3, 1).reshape(1, gh * gw, self.dim)
        return torch.cat([cls_pos, grid_pos], dim=1)

    def forward(
        self,
        images: torch.Tensor,
        mask: torch.Tensor | None = None,
        mode: str = "full",
        return_cls_attention: bool = False,
    ) -> dict[str, torch.Tensor | None]:
        """Returns {"tokens": (B, 1+L', d), "kept_indices": (B, L-P) or None}."""
        b, c, h, w = images.shape
        gh, gw = h // self.patch_size, w // self.patch_size
        l = gh * gw
        if mode not in ("full", "substitute", "drop"):
            raise ValueError(f"unknown encode mode {mode!r}")
        if mode != "full":
            if mask is None:
                raise ValueError(f"mode {mode!r} requires a mask")
            if mask.dim() == 1:
                mask = mask.unsqueeze(0).expand(b, -1)
            if mask.shape != (b, l):
                raise ValueError(f"mask shape {tuple(mask.shape)} does not match {l} patches")
        x = self.patch_embed(patchify(images, self.patch_size))
        pos = self._pos_for_grid(gh, gw).to(x.dtype)
        kept_indices: torch.Tensor | None = None
        if mode == "substitute":
            x = torch.where(mask.unsqueeze(-1), self.mask_token.to(x.dtype).expand(b, l, -1), x)
            x = x + pos[:, 1:]
        elif mode == "drop":
            counts = (~mask).sum(dim=1)
            n_keep = int(counts[0].item())
            if n_keep == 0:
                raise ValueError("drop mode with every patch masked leaves only the CLS token")
            if not torch.all(counts == n_keep):
                raise ValueError("drop mode requires an equal kept count per sample")
            x = x + pos[:, 1:]
            kept_indices = torch.argsort(mask.long(), dim=1, stable=True)[:, :n_keep]
            x = torch.gather(x, 1, kept_indices.unsqueeze(-1).expand(-1, -1, self.dim))
        else:
            x = x + pos[:, 1:]
        cls = (self.cls_token + pos[:, :1]).to(x.dtype).expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1)
        cls_attention = None
        for i, block in enumerate(self.blocks):
            if return_cls_attention and i == len(self.blocks) - 1:
                x, attn = block.forward_with_attention(x)
                cls_attention = attn[:, :, 0, 1:].mean(dim=1)  # CLS -> patches, head-averaged
            else:
                x = block(x)
        x = self.norm(x)
        out: dict[str, torch.Tensor | None] = {"tokens": x, "kept_indices": kept_indices}
        if return_cls_attention:
            out["cls_attention"] = cls_attention
        return out


class VisionDecoder(nn.Module):
    """Upsamples kept-token embeddings back to per-patch pixel predictions.

    Mask tokens are re-inserted at the positions they were dropped from
    before any decoder block runs.
    """

    def __init__(self, num_patches: int, encoder_dim: int, layers: int, dim: int, heads: int,
                 patch_size: int, channels: int = 3):
        super().__init__()
        self.num_patches = num_patches
        self.embed = nn.Linear(encoder_dim, dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, 1 + num_patches, dim))
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, patch_size * patch_size * channels)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def forward(self, tokens: torch.Tensor, kept_indices: torch.Tensor) -> torch.Tensor:
        """tokens: (B, 1+Lkept, enc_dim) with CLS first; returns (B, L, patch_pixels)."""
        b = tokens.shape[0]
        if kept_indices.max().item() >= self.num_patches:
            raise IndexError("kept index out of range")
        x = self.embed(tokens)
        full = self.mask_token.to(x.dtype).expand(b, self.num_patches, -1).clone()
        full = full.scatter(
            1, kept_indices.unsqueeze(-1).expand(-1, -1, x.shape[-1]), x[:, 1:]
        )
        x = torch.cat([x[:, :1], full], dim=1) + self.pos_embed.to(x.dtype)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return self.head(x[:, 1:])
