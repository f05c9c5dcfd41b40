"""Backbone training loop on random latent crops."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from envvc.backbone.loss import diffusion_loss
from envvc.backbone.schedule import make_schedule
from envvc.backbone.unet import FRAMES_PER_TOKEN, Backbone

log = logging.getLogger(__name__)


@dataclass
class BackboneTrainConfig:
    steps: int = 6000
    batch: int = 16
    crop_frames: int = 64
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    weight_decay: float = 0.0
    p_drop: float = 0.1
    env_noise: float = 0.06
    schedule: str = "linear"
    T: int = 1000
    log_every: int = 100


@dataclass
class TrainingData:
    """Per-clip training tensors: latents ``(N, T, C)``, env embeddings ``(N, D_clap)``,
    content tokens ``(N, L)`` and speaker embeddings ``(N, D_spk)``."""

    latents: np.ndarray
    c_env: np.ndarray
    tokens: np.ndarray
    e_spk: np.ndarray

    def __post_init__(self):
        n = len(self.latents)
        if not (len(self.c_env) == len(self.tokens) == len(self.e_spk) == n) or n == 0:
            raise ValueError("training arrays must be non-empty and share their first dimension")


def learning_rate(cfg: BackboneTrainConfig, step: int) -> float:
    """``constant``, or ``cosine`` annealing from ``lr`` to zero over the run."""
    if cfg.lr_schedule == "constant":
        return cfg.lr
    if cfg.lr_schedule == "cosine":
        return 0.5 * cfg.lr * (1.0 + np.cos(np.pi * step / max(cfg.steps, 1)))
    raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {cfg.lr_schedule!r}")


def fit_latent_scale(latents: np.ndarray) -> tuple[float, float]:
    return float(latents.mean()), float(latents.std())


def train_backbone(
    data: TrainingData,
    cfg: BackboneTrainConfig | None = None,
    seed: int = 0,
    metrics_path=None,
    model: Backbone | None = None,
) -> Backbone:
    """AdamW on the noise-prediction loss.

    Each example is a random crop of ``crop_frames`` latent frames starting on a
    token boundary; the conditioning always carries the clip's full token
    sequence, so the denoiser learns where in the sequence it sits.

    Training sees CLAP audio embeddings while inference feeds text embeddings,
    which sit a little off the audio clusters. Each env embedding is therefore
    jittered by isotropic Gaussian noise of scale ``env_noise`` per dimension
    and re-normalised.
    """
    cfg = cfg or BackboneTrainConfig()
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = model or Backbone()
    shift, scale = fit_latent_scale(data.latents)
    model.latent_shift.fill_(shift)
    model.latent_scale.fill_(scale)
    schedule = make_schedule(cfg.T, cfg.schedule)
    model.set_schedule(schedule)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n, n_frames, _ = data.latents.shape
    crop = min(cfg.crop_frames, n_frames)
    step_frames = int(FRAMES_PER_TOKEN)
    max_start = (n_frames - crop) // step_frames
    metrics = open(metrics_path, "w") if metrics_path else None
    t0 = time.time()
    model.train()
    try:
        for step in range(cfg.steps):
            for group in opt.param_groups:
                group["lr"] = learning_rate(cfg, step)
            idx = rng.integers(n, size=cfg.batch)
            starts = rng.integers(0, max_start + 1, size=cfg.batch) * step_frames
            z0 = np.stack([data.latents[i, s : s + crop] for i, s in zip(idx, starts)])
            c_env = data.c_env[idx] + cfg.env_noise * rng.standard_normal(data.c_env[idx].shape)
            c_env = (c_env / np.linalg.norm(c_env, axis=1, keepdims=True)).astype(np.float32)
            loss = diffusion_loss(
                model,
                model.normalize_latent(z0),
                c_env,
                data.tokens[idx],
                data.e_spk[idx],
                schedule,
                p_drop=cfg.p_drop,
                generator=gen,
                frame_offset=torch.as_tensor(starts, dtype=model.dtype),
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                elapsed = time.time() - t0
                log.info("backbone step %d loss %.4f (%.0fs)", step, loss.item(), elapsed)
                if metrics:
                    metrics.write(f"step={step} loss={loss.item():.6f} wall={elapsed:.2f}\n")
                    metrics.flush()
    finally:
        if metrics:
            metrics.close()
    model.eval()
    return model

