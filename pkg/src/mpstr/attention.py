"""Multi-head attention with additive blocking masks.

The blocking convention matches the schedule tables: a True (or 1) entry
means the key is masked for that query.  Blocked keys receive exactly zero
weight, so a context row blocked for every query cannot influence any output
bit.  Query rows with no attendable key at all produce exactly zero attention
output instead of NaN.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiheadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self._last_weights: torch.Tensor | None = None

    def forward(
        self,
        query: torch.Tensor,  # (B, Q, D)
        key: torch.Tensor,  # (B, S, D)
        value: torch.Tensor,  # (B, S, D)
        blocked: torch.Tensor | None = None,  # bool, (Q, S) or (B, Q, S)
        keep_weights: bool = False,
    ) -> torch.Tensor:
        B, Q, D = query.shape
        S = key.shape[1]
        h, hd = self.heads, self.head_dim

        q = self.q_proj(query).view(B, Q, h, hd).transpose(1, 2)
        k = self.k_proj(key).view(B, S, h, hd).transpose(1, 2)
        v = self.v_proj(value).view(B, S, h, hd).transpose(1, 2)

        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(hd)
        if blocked is not None:
            if blocked.dim() == 2:
                blocked = blocked.unsqueeze(0)
            blocked = blocked.unsqueeze(1)  # (B, 1, Q, S), broadcast over heads
            dead = blocked.all(dim=-1, keepdim=True)  # queries with no key
            scores = scores.masked_fill(blocked & ~dead, float("-inf"))
            attn = F.softmax(scores, dim=-1)
            attn = attn.masked_fill(dead, 0.0)
        else:
            attn = F.softmax(scores, dim=-1)
        if keep_weights:
            self._last_weights = attn.detach()

        out = torch.matmul(attn, v)
        out = out.transpose(1, 2).reshape(B, Q, D)
        return self.out_proj(out)

    @property
    def last_weights(self) -> torch.Tensor | None:
        """(B, heads, Q, S) weights from the last keep_weights=True call."""
        return self._last_weights


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))
