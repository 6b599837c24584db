"""Masked-and-permuted decoder.

One decoding pass runs two cross-attention stages: position queries attend
the doubled context (word half + mask half) under a schedule, then the result
attends the visual features unmasked.  The output head scores characters plus
the ending symbol for every query slot; rows beyond a word's length carry
garbage that training and inference ignore.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .attention import MultiheadAttention, Mlp
from .codec import Charset, LengthViolation
from .config import DecoderConfig
from .schedules import AttentionSchedule, PadMask


def context_ids(tokens, L: int, T: int, charset: Charset) -> np.ndarray:
    """Word-side context token ids, shape (T+2,).

    Row 0 is [B]; rows 1..len(tokens) the determined characters; undetermined
    rows up to L stay [P] (attention never reads them); row L+1 is [E]; the
    rest is [P].
    """
    tokens = list(tokens)
    if not len(tokens) <= L <= T:
        raise LengthViolation(f"{len(tokens)} tokens do not fit length {L} <= {T}")
    sp = charset.specials
    ids = np.full(T + 2, sp.pad, dtype=np.int64)
    ids[0] = sp.bos
    ids[1 : 1 + len(tokens)] = tokens
    ids[L + 1] = sp.eos
    return ids


def combine_blocked(schedule: AttentionSchedule, pad: PadMask) -> np.ndarray:
    """Boolean (T+1, 2(T+2)) key-block matrix: schedule blocks OR padded."""
    return (schedule.combined == 1) | (pad.combined == 0)[None, :]


class MPDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, charset: Charset):
        super().__init__()
        self.cfg = cfg
        self.charset = charset
        dim, T = cfg.dim, cfg.max_len
        self.embed = nn.Embedding(charset.num_embeddings, dim)
        # One learned query per character slot plus one for the ending symbol.
        self.pos_queries = nn.Parameter(torch.empty(1, T + 1, dim))
        # Context rows share the query position table shifted by one; row 0
        # ([B] and its mask) gets its own vector.
        self.bos_pos = nn.Parameter(torch.empty(1, 1, dim))
        self.norm_q = nn.LayerNorm(dim)
        self.mhca_ctx = MultiheadAttention(dim, cfg.heads)
        self.norm_h = nn.LayerNorm(dim)
        self.mhca_vis = MultiheadAttention(dim, cfg.heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * cfg.mlp_ratio))
        self.norm_out = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, charset.num_classes)
        nn.init.trunc_normal_(self.pos_queries, std=0.02)
        nn.init.trunc_normal_(self.bos_pos, std=0.02)
        nn.init.trunc_normal_(self.embed.weight, std=0.02)

    def context_positions(self) -> torch.Tensor:
        """(1, T+2, D): position added to word row i and mask row i alike."""
        return torch.cat([self.bos_pos, self.pos_queries], dim=1)

    def build_context(self, word_ids: torch.Tensor) -> torch.Tensor:
        """(B, T+2) word-side ids -> (B, 2(T+2), D) doubled context embedding."""
        pos = self.context_positions()
        c_word = self.embed(word_ids) + pos
        mask_vec = self.embed.weight[self.charset.specials.mask]
        c_mask = mask_vec.view(1, 1, -1) + pos
        c_mask = c_mask.expand(word_ids.shape[0], -1, -1)
        return torch.cat([c_word, c_mask], dim=1)

    def forward(
        self,
        context: torch.Tensor,  # (B, 2(T+2), D)
        blocked: torch.Tensor,  # bool (T+1, 2(T+2)) or (B, T+1, 2(T+2))
        z_v: torch.Tensor,  # (B, N, D)
        keep_weights: bool = False,
    ) -> torch.Tensor:
        """Logits (B, T+1, charset+1)."""
        B = context.shape[0]
        p = self.pos_queries.expand(B, -1, -1)
        if self.cfg.pre_norm:
            h = p + self.mhca_ctx(self.norm_q(p), context, context, blocked, keep_weights)
            h = h + self.mhca_vis(self.norm_h(h), z_v, z_v)
            h = h + self.mlp(self.norm_mlp(h))
            return self.head(self.norm_out(h))
        h = self.norm_q(p + self.mhca_ctx(p, context, context, blocked, keep_weights))
        h = self.norm_h(h + self.mhca_vis(h, z_v, z_v))
        h = self.norm_mlp(h + self.mlp(h))
        return self.head(h)

    def last_context_attention(self) -> torch.Tensor | None:
        """First-MHCA weights from the last keep_weights=True forward."""
        return self.mhca_ctx.last_weights


def format_attention(weights: torch.Tensor, decimals: int = 3) -> str:
    """Head-averaged attention as plain-text matrices, one block per batch item."""
    avg = weights.mean(dim=1)  # (B, Q, S)
    blocks = []
    for b in range(avg.shape[0]):
        rows = [" ".join(f"{v:.{decimals}f}" for v in row) for row in avg[b].tolist()]
        blocks.append("\n".join(rows))
    return "\n\n".join(blocks)
