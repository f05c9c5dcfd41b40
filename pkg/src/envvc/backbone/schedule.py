"""Noise schedules and the forward (noising) process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    kind: str = "linear"

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t):
        """``alpha_bar_t`` as a tensor of the same shape as ``t``."""
        ab = torch.from_numpy(self.alpha_bars)
        return ab[torch.as_tensor(t, dtype=torch.long)]


def make_schedule(T: int = 1000, kind: str = "linear", beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    if T < 2:
        raise ScheduleError(f"need at least 2 timesteps, got {T}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        s = 0.008
        x = np.arange(T + 1) / T
        f = np.cos((x + s) / (1 + s) * np.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r} (expected 'linear' or 'cosine')")
    return NoiseSchedule(betas=betas, kind=kind)


def add_noise(z0, t, epsilon, schedule: NoiseSchedule):
    """``z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``; ``t`` is a scalar or one index per batch row."""
    z0 = torch.as_tensor(z0)
    epsilon = torch.as_tensor(epsilon)
    if z0.shape != epsilon.shape:
        raise ScheduleError(f"noise shape {tuple(epsilon.shape)} does not match latent shape {tuple(z0.shape)}")
    ab = schedule.alpha_bar(t).to(z0.dtype)
    ab = ab.reshape(ab.shape + (1,) * (z0.dim() - ab.dim()))
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * epsilon
