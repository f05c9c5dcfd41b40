"""Dual classifier-free guidance and deterministic DDIM sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from envvc.backbone.schedule import NoiseSchedule, ScheduleError
from envvc.backbone.unet import SpeechConditioning


@dataclass(frozen=True)
class GuidanceConfig:
    omega_env: float = 1.5
    omega_speech: float = 1.5

    def __post_init__(self):
        if not (np.isfinite(self.omega_env) and np.isfinite(self.omega_speech)):
            raise ValueError("guidance scales must be finite")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")


@dataclass
class Conditions:
    """Real and null conditions for one batch."""

    c_env: torch.Tensor
    c_speech: SpeechConditioning
    null_env: torch.Tensor
    null_speech: SpeechConditioning


def guided_noise(denoiser, z_t, t, cond: Conditions, guidance: GuidanceConfig):
    """Combine four denoiser calls into the dual-guidance estimate.

    ``denoiser(z_t, t, c_env, c_speech)`` is called once each for
    (env, speech), (env, null), (null, speech) and (null, null).
    """
    e_full = denoiser(z_t, t, cond.c_env, cond.c_speech)
    e_env = denoiser(z_t, t, cond.c_env, cond.null_speech)
    e_spk = denoiser(z_t, t, cond.null_env, cond.c_speech)
    e_null = denoiser(z_t, t, cond.null_env, cond.null_speech)
    return e_full + guidance.omega_env * (e_env - e_null) + guidance.omega_speech * (e_spk - e_null)


def predict_x0(z_t, t: int, eps, schedule: NoiseSchedule):
    ab = float(schedule.alpha_bars[t])
    return (z_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def ddim_step(z_t, t: int, t_prev: int, eps, schedule: NoiseSchedule, eta: float = 0.0, generator=None):
    """One DDIM update from ``t`` to ``t_prev``; ``t_prev = -1`` means the clean end (alpha_bar = 1)."""
    if t_prev >= t:
        raise ScheduleError(f"t_prev ({t_prev}) must be below t ({t})")
    ab_t = float(schedule.alpha_bars[t])
    ab_prev = 1.0 if t_prev < 0 else float(schedule.alpha_bars[t_prev])
    if ab_prev < ab_t:
        raise ScheduleError("alpha_bar must not decrease towards t_prev")
    x0 = predict_x0(z_t, t, eps, schedule)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev) if eta > 0 else 0.0
    out = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps
    if sigma > 0:
        out = out + sigma * torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype)
    return out


def timestep_sequence(steps: int, T: int) -> np.ndarray:
    """``steps`` evenly spaced integer timesteps from ``T-1`` down to 0, endpoints included."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}], got {steps}")
    if steps == 1:
        return np.array([T - 1])
    ts = np.round(np.linspace(T - 1, 0, steps)).astype(np.int64)
    if len(np.unique(ts)) != steps:
        raise ValueError("timestep subsequence has duplicates")
    return ts


@torch.no_grad()
def sample(
    denoiser,
    cond: Conditions,
    shape,
    schedule: NoiseSchedule,
    guidance: GuidanceConfig = GuidanceConfig(),
    sampler: SamplerConfig = SamplerConfig(),
    dtype=torch.float32,
    callback=None,
):
    """Reverse diffusion from seeded Gaussian noise; returns the final clean-latent estimate.

    ``callback(i, t)`` fires once per guided step.
    """
    gen = torch.Generator().manual_seed(sampler.seed)
    z = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    ts = timestep_sequence(sampler.steps, schedule.T)
    for i, t in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else -1
        t_vec = torch.full((z.shape[0],), int(t), dtype=torch.long)
        eps = guided_noise(denoiser, z, t_vec, cond, guidance)
        if callback is not None:
            callback(i, int(t))
        z = ddim_step(z, int(t), t_prev, eps, schedule, sampler.eta, gen)
    return z


def backbone_conditions(model, c_env, tokens, e_spk) -> Conditions:
    """Conditions for a single conversion request (batch of one)."""
    c_env = torch.as_tensor(c_env, dtype=model.dtype).reshape(1, -1)
    return Conditions(
        c_env=c_env,
        c_speech=model.speech_conditioning(tokens, e_spk),
        null_env=model.null_env_batch(1),
        null_speech=model.null_speech_conditioning(1),
    )


@torch.no_grad()
def sample_latent(model, c_env, tokens, e_spk, n_frames, schedule, guidance=GuidanceConfig(), sampler=SamplerConfig()):
    """Sample de-normalised latent frames ``(n_frames, C)`` from a trained backbone."""
    model.eval()
    cond = backbone_conditions(model, c_env, tokens, e_spk)
    z = sample(model.predict_noise, cond, (1, n_frames, model.dims["channels"]), schedule, guidance, sampler, model.dtype)
    return model.denormalize_latent(z)[0].double().numpy()
