"""Rotary position encoding."""

from __future__ import annotations

import torch


def rope_apply(x: torch.Tensor, positions, base: float = 10000.0) -> torch.Tensor:
    """Rotate consecutive pairs ``(x_2k, x_2k+1)`` by ``position * base**(-2k/D)``.

    ``x`` is ``(..., L, D)``; ``positions`` broadcasts against ``(..., L)``.
    """
    d = x.shape[-1]
    if d % 2:
        raise ValueError(f"rotary encoding needs an even dimension, got {d}")
    pos = torch.as_tensor(positions, dtype=x.dtype)
    theta = base ** (-torch.arange(0, d, 2, dtype=x.dtype) / d)
    angle = pos.unsqueeze(-1) * theta
    cos, sin = angle.cos(), angle.sin()
    even, odd = x[..., 0::2], x[..., 1::2]
    out = torch.stack([even * cos - odd * sin, even * sin + odd * cos], dim=-1)
    return out.flatten(-2)
