"""Patch-based transformer encoder with a learnable length token.

The first token of the sequence is the length token; its final embedding
drives word-length classification, while the remaining patch tokens become
the visual features consumed by the decoder.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import MultiheadAttention, Mlp
from .config import EncoderConfig


class EncoderBlock(nn.Module):
    """Pre-norm transformer block: self-attention then MLP, both residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y, y)
        x = x + self.mlp(self.norm2(x))
        return x


class ViTEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        patch_dim = cfg.patch_h * cfg.patch_w * cfg.channels
        self.patch_proj = nn.Linear(patch_dim, cfg.dim)
        self.len_token = nn.Parameter(torch.empty(1, 1, cfg.dim))
        self.pos_embed = nn.Parameter(torch.empty(1, cfg.num_patches + 1, cfg.dim))
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.dim)
        nn.init.trunc_normal_(self.len_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, N, patch_h*patch_w*C) flattened patches.

        Patch order is row-major over the patch grid.
        """
        cfg = self.cfg
        if images.dim() == 3:
            images = images.unsqueeze(1)
        B, C, H, W = images.shape
        if (C, H, W) != (cfg.channels, cfg.image_height, cfg.image_width):
            raise ValueError(
                f"image shape {(C, H, W)} does not match configured "
                f"{(cfg.channels, cfg.image_height, cfg.image_width)}"
            )
        nh, nw = H // cfg.patch_h, W // cfg.patch_w
        x = images.view(B, C, nh, cfg.patch_h, nw, cfg.patch_w)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(B, nh * nw, -1)
        return x

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (length-token embedding z0 (B, D), visual features (B, N, D))."""
        patches = self.patch_proj(self.patchify(images))
        B = patches.shape[0]
        x = torch.cat([self.len_token.expand(B, -1, -1), patches], dim=1)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, 0], x[:, 1:]


class WordLengthHead(nn.Module):
    """T-way length classifier on the length token: LN then two FC layers.

    Class c corresponds to length c+1 (zero-length words never occur).
    """

    def __init__(self, dim: int, max_len: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, max_len)

    def forward(self, z0: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(self.norm(z0))))

    @staticmethod
    def lengths_from_logits(logits: torch.Tensor) -> torch.Tensor:
        """argmax class + 1; ties resolve to the lowest index."""
        return first_argmax(logits) + 1


class CharLengthHead(nn.Module):
    """Ablation variant: per-slot binary occupancy via a parallel decoder.

    Predicted length is the number of positive slots, clamped to [1, T].
    """

    def __init__(self, dim: int, heads: int, max_len: int):
        super().__init__()
        self.queries = nn.Parameter(torch.empty(1, max_len, dim))
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiheadAttention(dim, heads)
        self.fc = nn.Linear(dim, 1)
        nn.init.trunc_normal_(self.queries, std=0.02)

    def forward(self, z_v: torch.Tensor) -> torch.Tensor:
        q = self.queries.expand(z_v.shape[0], -1, -1)
        h = q + self.attn(self.norm(q), z_v, z_v)
        return self.fc(h).squeeze(-1)

    @staticmethod
    def lengths_from_logits(logits: torch.Tensor) -> torch.Tensor:
        count = (logits > 0).sum(dim=-1)
        return count.clamp(min=1)


def first_argmax(x: torch.Tensor) -> torch.Tensor:
    """Index of the first maximal entry along the last dim (deterministic)."""
    is_max = x == x.amax(dim=-1, keepdim=True)
    idx = torch.arange(x.shape[-1], device=x.device)
    big = x.shape[-1]
    return torch.where(is_max, idx, big).amin(dim=-1)
