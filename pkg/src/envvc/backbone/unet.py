"""Conditional 1-D U-Net denoiser over latent frames.

Time enters as a sinusoidal embedding added to channel features, the
environment embedding (plus the speaker slot of the speech condition) as a
feature-wise affine modulation, and the speech conditioning sequence through
cross-attention at the middle and bottleneck resolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from envvc.backbone.adapter import ContentAdapter
from envvc.backbone.schedule import make_schedule
from envvc.corpus import TOKEN_RATE
from envvc.encoders.codec import FRAME_RATE, N_MELS

FRAMES_PER_TOKEN = FRAME_RATE / TOKEN_RATE


@dataclass
class SpeechConditioning:
    """Cross-attention memory: ``seq (B, S, D)``, slot ``positions (B, S)`` in
    token units (NaN for position-free slots) and a ``valid (B, S)`` mask.

    ``speaker (B, D)`` repeats the speaker slot (or the null slot) as a global
    vector for feature-wise modulation.
    """

    seq: torch.Tensor
    positions: torch.Tensor
    valid: torch.Tensor
    speaker: torch.Tensor

    def __len__(self):
        return self.seq.shape[1]

    @property
    def batch(self) -> int:
        return self.seq.shape[0]

    def pad_to(self, length: int) -> "SpeechConditioning":
        extra = length - self.seq.shape[1]
        if extra <= 0:
            return self
        b, _, d = self.seq.shape
        return SpeechConditioning(
            seq=torch.cat([self.seq, self.seq.new_zeros(b, extra, d)], dim=1),
            positions=torch.cat([self.positions, self.positions.new_full((b, extra), float("nan"))], dim=1),
            valid=torch.cat([self.valid, self.valid.new_zeros(b, extra)], dim=1),
            speaker=self.speaker,
        )

    @staticmethod
    def select(mask: torch.Tensor, a: "SpeechConditioning", b: "SpeechConditioning") -> "SpeechConditioning":
        """Row-wise ``a if mask else b``."""
        n = max(len(a), len(b))
        a, b = a.pad_to(n), b.pad_to(n)
        m = mask.reshape(-1, 1)
        return SpeechConditioning(
            seq=torch.where(m.unsqueeze(-1), a.seq, b.seq),
            positions=torch.where(m, a.positions, b.positions),
            valid=torch.where(m, a.valid, b.valid),
            speaker=torch.where(m, a.speaker, b.speaker),
        )


def assemble_conditioning(u_states: torch.Tensor, e_spk: torch.Tensor, speaker_proj: nn.Linear) -> SpeechConditioning:
    """Append the projected speaker embedding as one extra slot after the content states."""
    if u_states.dim() == 2:
        u_states = u_states[None]
    e_spk = torch.as_tensor(e_spk, dtype=u_states.dtype)
    if e_spk.dim() == 1:
        e_spk = e_spk[None]
    if e_spk.shape[-1] != speaker_proj.in_features:
        raise ValueError(f"speaker embedding has dim {e_spk.shape[-1]}, projection expects {speaker_proj.in_features}")
    if speaker_proj.out_features != u_states.shape[-1]:
        raise ValueError("speaker projection width does not match content state width")
    b, n, _ = u_states.shape
    spk = speaker_proj(e_spk).expand(b, -1).unsqueeze(1)
    pos = torch.cat(
        [torch.arange(n, dtype=u_states.dtype).expand(b, n), u_states.new_full((b, 1), float("nan"))], dim=1
    )
    return SpeechConditioning(
        seq=torch.cat([u_states, spk], dim=1),
        positions=pos,
        valid=torch.ones(b, n + 1, dtype=torch.bool),
        speaker=spk[:, 0],
    )


def timestep_embedding(t: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / half)
    args = t.to(dtype).unsqueeze(-1) * freqs
    return torch.cat([args.cos(), args.sin()], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv1d(cin, cout, 3, padding=1)
        self.time = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.film = nn.Linear(emb_dim, 2 * cout)
        self.conv2 = nn.Conv1d(cout, cout, 3, padding=1)
        self.skip = nn.Conv1d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb, eemb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(temb).unsqueeze(-1)
        scale, shift = self.film(eemb).unsqueeze(-1).chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Cross-attention with a learned per-head penalty on |query time - slot time|."""

    def __init__(self, channels, cond_dim, heads=4):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(8, channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(cond_dim, channels)
        self.v = nn.Linear(cond_dim, channels)
        self.out = nn.Linear(channels, channels)
        # softplus(0.5413) == 1.0
        self.slope = nn.Parameter(torch.full((heads,), 0.5413))

    def forward(self, x, cond: SpeechConditioning, q_pos):
        b, c, n = x.shape
        h = self.heads
        dh = c // h
        xs = self.norm(x).transpose(1, 2)
        q = self.q(xs).reshape(b, n, h, dh).transpose(1, 2)
        k = self.k(cond.seq).reshape(b, -1, h, dh).transpose(1, 2)
        v = self.v(cond.seq).reshape(b, -1, h, dh).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(dh)
        dist = (q_pos.unsqueeze(-1) - cond.positions.unsqueeze(1)).abs().unsqueeze(1)
        bias = -F.softplus(self.slope).reshape(1, h, 1, 1) * torch.nan_to_num(dist, nan=0.0)
        logits = (logits + bias).masked_fill(~cond.valid.reshape(b, 1, 1, -1), float("-inf"))
        y = (logits.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, n, c)
        return x + self.out(y).transpose(1, 2)


class UNet(nn.Module):
    def __init__(self, channels=N_MELS, widths=(64, 128, 256), cond_dim=64, env_dim=64, emb_dim=256, heads=4):
        super().__init__()
        w0, w1, w2 = widths
        self.time_dim = w0
        self.time_mlp = nn.Sequential(nn.Linear(w0, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.env_mlp = nn.Sequential(nn.Linear(env_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.spk_mlp = nn.Sequential(nn.Linear(cond_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.inp = nn.Conv1d(channels, w0, 3, padding=1)
        self.enc0 = ResBlock(w0, w0, emb_dim)
        self.down0 = nn.Conv1d(w0, w1, 3, stride=2, padding=1)
        self.enc1 = ResBlock(w1, w1, emb_dim)
        self.att1 = CrossAttention(w1, cond_dim, heads)
        self.down1 = nn.Conv1d(w1, w2, 3, stride=2, padding=1)
        self.mid1 = ResBlock(w2, w2, emb_dim)
        self.att_mid = CrossAttention(w2, cond_dim, heads)
        self.mid2 = ResBlock(w2, w2, emb_dim)
        self.up1 = nn.Conv1d(w2, w1, 3, padding=1)
        self.dec1 = ResBlock(2 * w1, w1, emb_dim)
        self.att_dec1 = CrossAttention(w1, cond_dim, heads)
        self.up0 = nn.Conv1d(w1, w0, 3, padding=1)
        self.dec0 = ResBlock(2 * w0, w0, emb_dim)
        self.out_norm = nn.GroupNorm(8, w0)
        self.out = nn.Conv1d(w0, channels, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    @staticmethod
    def _token_coords(n, factor, frame_offset, dtype):
        frames = torch.arange(n, dtype=dtype) * factor + (factor - 1) / 2.0
        frames = frames.unsqueeze(0) + torch.as_tensor(frame_offset, dtype=dtype).reshape(-1, 1)
        return (frames + 0.5) / FRAMES_PER_TOKEN - 0.5

    def forward(self, z, t, c_env, cond: SpeechConditioning, frame_offset=0):
        # z: (B, T, C) -> channels-first
        x = z.transpose(1, 2)
        temb = self.time_mlp(timestep_embedding(t, self.time_dim, z.dtype))
        # global modulation: environment plus the speaker slot of the speech condition
        eemb = self.env_mlp(c_env) + self.spk_mlp(cond.speaker)
        h0 = self.enc0(self.inp(x), temb, eemb)
        n0 = h0.shape[-1]
        h1 = self.down0(h0)
        n1 = h1.shape[-1]
        h1 = self.att1(self.enc1(h1, temb, eemb), cond, self._token_coords(n1, 2, frame_offset, z.dtype))
        h2 = self.down1(h1)
        n2 = h2.shape[-1]
        h2 = self.mid1(h2, temb, eemb)
        h2 = self.att_mid(h2, cond, self._token_coords(n2, 4, frame_offset, z.dtype))
        h2 = self.mid2(h2, temb, eemb)
        u1 = self.up1(F.interpolate(h2, scale_factor=2, mode="nearest"))[..., :n1]
        u1 = self.dec1(torch.cat([u1, h1], dim=1), temb, eemb)
        u1 = self.att_dec1(u1, cond, self._token_coords(n1, 2, frame_offset, z.dtype))
        u0 = self.up0(F.interpolate(u1, scale_factor=2, mode="nearest"))[..., :n0]
        u0 = self.dec0(torch.cat([u0, h0], dim=1), temb, eemb)
        return self.out(F.silu(self.out_norm(u0))).transpose(1, 2)


class Backbone(nn.Module):
    """Content adapter, speaker projection, learned null conditions and the U-Net."""

    def __init__(self, channels=N_MELS, d_clap=64, d_spk=32, d_cond=64, widths=(64, 128, 256), heads=4, adapter_layers=4):
        super().__init__()
        self.dims = {"channels": channels, "d_clap": d_clap, "d_spk": d_spk, "d_cond": d_cond, "widths": list(widths)}
        self.adapter = ContentAdapter(d_cond, adapter_layers, heads)
        self.speaker_proj = nn.Linear(d_spk, d_cond)
        self.null_env = nn.Parameter(torch.zeros(d_clap))
        self.null_speech = nn.Parameter(torch.zeros(1, d_cond))
        self.unet = UNet(channels, widths, d_cond, d_clap, heads=heads)
        self.register_buffer("latent_shift", torch.tensor(0.0))
        self.register_buffer("latent_scale", torch.tensor(1.0))
        # sqrt(1 - alpha_bar_t) per timestep; set from the training schedule
        self.register_buffer("noise_std", torch.from_numpy(np.sqrt(1.0 - make_schedule().alpha_bars)).float())

    @property
    def dtype(self):
        return self.null_env.dtype

    def set_schedule(self, schedule):
        self.noise_std = torch.from_numpy(np.sqrt(1.0 - schedule.alpha_bars)).to(self.dtype)

    def normalize_latent(self, frames):
        return (torch.as_tensor(frames, dtype=self.dtype) - self.latent_shift) / self.latent_scale

    def denormalize_latent(self, z):
        return z * self.latent_scale + self.latent_shift

    def speech_conditioning(self, tokens, e_spk) -> SpeechConditioning:
        u = self.adapter(tokens)
        return assemble_conditioning(u, torch.as_tensor(e_spk, dtype=self.dtype), self.speaker_proj)

    def null_speech_conditioning(self, batch: int) -> SpeechConditioning:
        d = self.null_speech.shape[-1]
        return SpeechConditioning(
            seq=self.null_speech.expand(batch, 1, d),
            positions=self.null_speech.new_full((batch, 1), float("nan")),
            valid=torch.ones(batch, 1, dtype=torch.bool),
            speaker=self.null_speech.expand(batch, d),
        )

    def null_env_batch(self, batch: int) -> torch.Tensor:
        return self.null_env.expand(batch, -1)

    def predict_noise(self, z_t, t, c_env, c_speech: SpeechConditioning, frame_offset=0):
        z_t = torch.as_tensor(z_t, dtype=self.dtype)
        if z_t.dim() != 3 or z_t.shape[-1] != self.dims["channels"]:
            raise ValueError(f"latent must be (B, T, {self.dims['channels']}), got {tuple(z_t.shape)}")
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(z_t.shape[0])
        c_env = torch.as_tensor(c_env, dtype=self.dtype)
        if c_env.dim() == 1:
            c_env = c_env.expand(z_t.shape[0], -1)
        if c_env.shape != (z_t.shape[0], self.dims["d_clap"]):
            raise ValueError(f"env condition must be (B, {self.dims['d_clap']}), got {tuple(c_env.shape)}")
        if c_speech.batch != z_t.shape[0]:
            raise ValueError("speech conditioning batch does not match the latent batch")
        if int(t.max()) >= self.noise_std.shape[0] or int(t.min()) < 0:
            raise ValueError(f"timestep outside [0, {self.noise_std.shape[0]})")
        # For unit-variance Gaussian data the optimal noise estimate is
        # sqrt(1 - alpha_bar_t) * z_t; the U-Net predicts the remainder, which
        # keeps the high-noise end (where x0 errors are amplified) easy to fit.
        base = self.noise_std[t].to(z_t.dtype).reshape(-1, 1, 1) * z_t
        return base + self.unet(z_t, t, c_env, c_speech, frame_offset)

    forward = predict_noise
