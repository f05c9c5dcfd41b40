"""Speaker encoder: a classifier whose penultimate layer is the timbre embedding."""

from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from envvc.audio import AudioClip, AudioError
from envvc.corpus import SpeakerProfile
from envvc.encoders.clap import normalize_frames
from envvc.encoders.codec import N_FFT, N_MELS, latent_encode

log = logging.getLogger(__name__)

D_SPK = 32


class SpeakerNet(nn.Module):
    def __init__(self, n_speakers: int, n_mels=N_MELS, width=96, dim=D_SPK):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv1d(n_mels, width, 3, padding=1),
            nn.GELU(),
            nn.Conv1d(width, width, 3, padding=1),
            nn.GELU(),
            nn.Conv1d(width, width, 3, padding=1),
            nn.GELU(),
        )
        self.embed = nn.Linear(2 * width, dim)
        self.classify = nn.Linear(dim, n_speakers)

    def embedding(self, frames):
        h = self.convs(frames.transpose(1, 2))
        stats = torch.cat([h.mean(dim=2), h.std(dim=2)], dim=1)
        return self.embed(stats)

    def forward(self, frames):
        return self.classify(F.relu(self.embedding(frames)))


def train_speaker_encoder(features, steps=2000, batch=32, crop=100, lr=1e-3, seed=0, log_every=500) -> SpeakerNet:
    """Cross-entropy over corpus speakers on random crops of clean and mixed speech."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    keep = features.train & ~features.silent
    pool = np.concatenate([features.clean[keep], features.mixture[keep]])
    labels = np.concatenate([features.speaker[keep], features.speaker[keep]])
    ids = np.unique(labels)
    label_index = {int(s): i for i, s in enumerate(ids)}
    y_all = np.array([label_index[int(s)] for s in labels])
    net = SpeakerNet(len(ids))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    T = pool.shape[1]
    for step in range(steps):
        pick = rng.integers(len(pool), size=batch)
        starts = rng.integers(0, T - crop + 1, size=batch)
        x = np.stack([pool[i, s : s + crop] for i, s in zip(pick, starts)])
        logits = net(normalize_frames(x).float())
        loss = F.cross_entropy(logits, torch.as_tensor(y_all[pick]))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("speaker step %d loss %.4f", step, loss.item())
    net.eval()
    net.speaker_ids = [int(s) for s in ids]
    return net


def oracle_speaker_embedding(profile: SpeakerProfile, dim=D_SPK, seed=1234) -> np.ndarray:
    """Fixed random projection of normalised synthesis parameters."""
    params = np.array(
        [
            np.log2(profile.f0_hz / 150.0),
            profile.spectral_tilt_db_oct / 10.0,
            profile.vibrato_hz - 5.0,
            100.0 * profile.vibrato_depth - 1.0,
        ]
    )
    proj = np.random.default_rng(seed).standard_normal((params.size + 1, dim))
    v = np.concatenate([params, [1.0]]) @ proj
    return v / np.linalg.norm(v)


@torch.no_grad()
def speaker_embed(source, mode: str = "trained", net: SpeakerNet | None = None) -> np.ndarray:
    """Unit-norm timbre embedding from a profile (oracle) or audio (trained).

    ``source`` may be a SpeakerProfile, an AudioClip, or log-mel frames ``(T, C)``
    / ``(B, T, C)`` in trained mode.
    """
    if mode == "oracle":
        if not isinstance(source, SpeakerProfile):
            raise TypeError("oracle mode needs a SpeakerProfile")
        return oracle_speaker_embedding(source)
    if mode != "trained":
        raise ValueError(f"mode must be 'oracle' or 'trained', got {mode!r}")
    if net is None:
        raise ValueError("trained mode needs a speaker network")
    if isinstance(source, AudioClip):
        if len(source) < N_FFT:
            raise AudioError(f"clip of {len(source)} samples is shorter than one analysis frame ({N_FFT})")
        source = latent_encode(source)
    frames = np.asarray(source)
    single = frames.ndim == 2
    x = normalize_frames(frames[None] if single else frames).to(next(net.parameters()).dtype)
    e = F.normalize(net.embedding(x), dim=-1).double().numpy()
    return e[0] if single else e
