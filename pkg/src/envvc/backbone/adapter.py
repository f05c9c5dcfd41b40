"""Content adapter: token embeddings contextualised by a small RoPE transformer."""

from __future__ import annotations

import torch
from torch import nn

from envvc.backbone.rope import rope_apply
from envvc.corpus import VOCAB_SIZE


class RopeSelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        pos = torch.arange(n)
        q, k = rope_apply(q, pos), rope_apply(k, pos)
        att = (q @ k.transpose(-1, -2)) / (d // self.heads) ** 0.5
        y = att.softmax(dim=-1) @ v
        return self.out(y.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    def __init__(self, dim, heads, ff_mult=2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = RopeSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class ContentAdapter(nn.Module):
    """Pre-norm transformer over content tokens; output ``(B, L, dim)``."""

    def __init__(self, dim=64, layers=4, heads=4, vocab=VOCAB_SIZE):
        super().__init__()
        self.embed = nn.Embedding(vocab, dim)
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)

    def forward(self, tokens):
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() == 1:
            tokens = tokens[None]
        if tokens.shape[-1] == 0:
            raise ValueError("content adapter needs at least one token")
        if tokens.min() < 0 or tokens.max() >= self.embed.num_embeddings:
            raise ValueError(f"token ids must lie in [0, {self.embed.num_embeddings})")
        x = self.embed(tokens)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

