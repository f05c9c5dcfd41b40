"""Noise-prediction objective with independent condition dropout."""

from __future__ import annotations

import torch

from envvc.backbone.schedule import NoiseSchedule, add_noise
from envvc.backbone.unet import SpeechConditioning


def dropout_masks(batch: int, p_drop: float, generator=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Independent per-row Bernoulli(p_drop) masks for the env and speech conditions."""
    u = torch.rand(2, batch, generator=generator, dtype=torch.float64)
    return u[0] < p_drop, u[1] < p_drop


def diffusion_loss(
    model,
    z0,
    c_env,
    tokens,
    e_spk,
    schedule: NoiseSchedule,
    p_drop: float = 0.1,
    generator=None,
    t=None,
    eps=None,
    drop_env=None,
    drop_speech=None,
    frame_offset=0,
    denoiser=None,
):
    """Mean of ``(eps - eps_hat)**2`` over batch, frames and channels.

    ``t`` is drawn uniformly from ``[0, T)`` and ``eps`` from a standard normal
    unless given. Rows flagged in ``drop_env`` / ``drop_speech`` (sampled at
    ``p_drop`` when omitted) see the learned null instead of their condition.
    ``denoiser(z_t, t, c_env, c_speech)`` overrides ``model.predict_noise``,
    which lets tests plug in stubs.
    """
    z0 = torch.as_tensor(z0, dtype=model.dtype)
    if z0.dim() != 3 or z0.shape[0] == 0:
        raise ValueError(f"expected a non-empty (B, T, C) latent batch, got {tuple(z0.shape)}")
    b = z0.shape[0]
    if t is None:
        t = torch.randint(0, schedule.T, (b,), generator=generator)
    t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(b)
    if eps is None:
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    eps = torch.as_tensor(eps, dtype=z0.dtype)
    if drop_env is None or drop_speech is None:
        de, ds = dropout_masks(b, p_drop, generator)
        drop_env = de if drop_env is None else drop_env
        drop_speech = ds if drop_speech is None else drop_speech
    drop_env = torch.as_tensor(drop_env, dtype=torch.bool).reshape(b)
    drop_speech = torch.as_tensor(drop_speech, dtype=torch.bool).reshape(b)

    c_env = torch.as_tensor(c_env, dtype=z0.dtype).reshape(b, -1)
    c_env = torch.where(drop_env[:, None], model.null_env_batch(b), c_env)
    cond = model.speech_conditioning(tokens, e_spk)
    cond = SpeechConditioning.select(~drop_speech, cond, model.null_speech_conditioning(b))

    z_t = add_noise(z0, t, eps, schedule)
    if denoiser is None:
        eps_hat = model.predict_noise(z_t, t, c_env, cond, frame_offset=frame_offset)
    else:
        eps_hat = denoiser(z_t, t, c_env, cond)
    return ((eps - eps_hat) ** 2).mean()
