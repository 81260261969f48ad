"""Shared transformer building blocks used by the encoders and the decoder.

All modules operate on single unbatched sequences shaped ``[length, width]``;
the training loop iterates examples individually at desk scale.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_positions(length: int, d: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed sinusoidal position table, shape [length, d]."""
    pos = torch.arange(length, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, d, 2, dtype=dtype)
    freqs = torch.exp(-math.log(10000.0) * half / d)
    table = torch.zeros(length, d, dtype=dtype)
    table[:, 0::2] = torch.sin(pos * freqs)
    table[:, 1::2] = torch.cos(pos * freqs)
    return table


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with learned projections, no dropout."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads != 0:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.d_head = d // heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        key_padding_mask: torch.Tensor | None = None,
        causal: bool = False,
    ) -> torch.Tensor:
        lq, lk = query.shape[0], key.shape[0]
        q = self.q_proj(query).view(lq, self.heads, self.d_head).transpose(0, 1)
        k = self.k_proj(key).view(lk, self.heads, self.d_head).transpose(0, 1)
        v = self.v_proj(value).view(lk, self.heads, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)  # [heads, lq, lk]
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask.view(1, 1, lk), float("-inf"))
        if causal:
            future = torch.triu(torch.ones(lq, lk, dtype=torch.bool, device=scores.device), 1)
            scores = scores.masked_fill(future.unsqueeze(0), float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(lq, self.d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d, mult * d)
        self.fc2 = nn.Linear(mult * d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Post-norm transformer encoder block: self-attention then feed-forward."""

    def __init__(self, d: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.attn = MultiHeadAttention(d, heads)
        self.ffn = FeedForward(d, ffn_mult)
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.ln1(x + self.attn(x, x, x, key_padding_mask=key_padding_mask))
        return self.ln2(x + self.ffn(x))


class DecoderBlock(nn.Module):
    """Causal self-attention, cross-attention to a memory, feed-forward."""

    def __init__(self, d: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.self_attn = MultiHeadAttention(d, heads)
        self.cross_attn = MultiHeadAttention(d, heads)
        self.ffn = FeedForward(d, ffn_mult)
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.ln3 = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = self.ln1(x + self.self_attn(x, x, x, causal=True))
        x = self.ln2(x + self.cross_attn(x, memory, memory))
        return self.ln3(x + self.ffn(x))


class TextEncoder(nn.Module):
    """Token embedding + sinusoidal positions + a stack of encoder blocks."""

    def __init__(
        self,
        vocab_size: int,
        d: int,
        heads: int,
        layers: int,
        max_len: int,
        pad_id: int,
        ffn_mult: int = 4,
    ):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, d)
        self.register_buffer("positions", sinusoidal_positions(max_len, d))
        self.blocks = nn.ModuleList(EncoderBlock(d, heads, ffn_mult) for _ in range(layers))
        self.pad_id = pad_id
        self.scale = math.sqrt(d)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        l = ids.shape[0]
        mask = ids == self.pad_id
        if not mask.any():
            mask = None
        x = self.embedding(ids) * self.scale + self.positions[:l]
        for block in self.blocks:
            x = block(x, key_padding_mask=mask)
        return x
