"""Toy contrastive audio-text model: two towers trained with symmetric InfoNCE."""

from __future__ import annotations

import logging
import warnings

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from envvc.audio import AudioClip
from envvc.corpus import all_env_captions, all_speaker_captions, caption_vocabulary, speaker_profile
from envvc.encoders.codec import N_MELS, latent_encode

log = logging.getLogger(__name__)

D_CLAP = 64
TEMPERATURE = 0.07
FRAME_SHIFT = -2.0
FRAME_SCALE = 4.0


class VocabularyError(ValueError):
    pass


def normalize_frames(frames) -> torch.Tensor:
    """Map log-mel frames ``(..., T, C)`` to roughly unit scale."""
    x = torch.as_tensor(np.asarray(frames) if not isinstance(frames, torch.Tensor) else frames)
    return (x - FRAME_SHIFT) / FRAME_SCALE


class Vocabulary:
    def __init__(self, words):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, caption: str) -> list[int]:
        ids = []
        for w in caption.lower().split():
            if w not in self.index:
                raise VocabularyError(f"word {w!r} is not in the caption vocabulary")
            ids.append(self.index[w])
        if not ids:
            raise VocabularyError("empty caption")
        return ids


class AudioTower(nn.Module):
    def __init__(self, n_mels=N_MELS, width=64, dim=D_CLAP):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv1d(n_mels, width, 5, stride=2, padding=2),
            nn.GELU(),
            nn.Conv1d(width, 2 * width, 5, stride=2, padding=2),
            nn.GELU(),
            nn.Conv1d(2 * width, 2 * width, 5, stride=2, padding=2),
            nn.GELU(),
        )
        self.head = nn.Linear(2 * width, dim)

    def forward(self, frames):
        # frames: (B, T, C), already normalised
        h = self.convs(frames.transpose(1, 2))
        return self.head(h.mean(dim=2))


class TextTower(nn.Module):
    def __init__(self, vocab_size, width=64, hidden=128, dim=D_CLAP):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, width)
        self.ff = nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, ids, mask):
        # ids, mask: (B, L); mean over the real words only
        e = self.embed(ids) * mask.unsqueeze(-1)
        pooled = e.sum(dim=1) / mask.sum(dim=1, keepdim=True)
        return self.ff(pooled)


class ToyCLAP(nn.Module):
    def __init__(self, vocabulary: Vocabulary | None = None, dim=D_CLAP, temperature=TEMPERATURE):
        super().__init__()
        self.vocab = vocabulary or Vocabulary(caption_vocabulary())
        self.dim = dim
        self.temperature = temperature
        self.audio = AudioTower(dim=dim)
        self.text = TextTower(len(self.vocab), dim=dim)

    def _dtype(self):
        return next(self.parameters()).dtype

    def tokenize(self, captions):
        seqs = [self.vocab.encode(c) for c in captions]
        width = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), width, dtype=torch.long)
        mask = torch.zeros(len(seqs), width, dtype=self._dtype())
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            mask[i, : len(s)] = 1.0
        return ids, mask

    def audio_embedding(self, frames) -> torch.Tensor:
        x = normalize_frames(frames).to(self._dtype())
        return F.normalize(self.audio(x), dim=-1)

    def text_embedding(self, captions) -> torch.Tensor:
        ids, mask = self.tokenize(captions)
        return F.normalize(self.text(ids, mask), dim=-1)


def info_nce(audio_emb: torch.Tensor, text_emb: torch.Tensor, temperature: float = TEMPERATURE) -> torch.Tensor:
    """Symmetric cross-entropy over the cosine-similarity matrix scaled by 1/temperature."""
    if audio_emb.shape[0] < 2:
        warnings.warn("InfoNCE with a single pair is degenerate (loss is identically 0)", stacklevel=2)
    a = F.normalize(audio_emb, dim=-1)
    t = F.normalize(text_emb, dim=-1)
    logits = a @ t.T / temperature
    target = torch.arange(a.shape[0])
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


def clap_train_step(model: ToyCLAP, optimizer, frames, captions) -> float:
    loss = info_nce(model.audio_embedding(frames), model.text_embedding(captions), model.temperature)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


# ----------------------------------------------------------- training data


def clap_pairs(features, split_mask=None):
    """Group clip frames by caption class.

    Returns ``{class_key: (frames_array, caption_list)}`` with one class per
    speaker (clean speech) and one per environment label (env track alone).
    """
    from envvc.data import ENV_LABELS

    mask = features.train if split_mask is None else split_mask
    groups = {}
    for spk in np.unique(features.speaker[mask]):
        idx = np.flatnonzero(mask & (features.speaker == spk) & ~features.silent)
        if idx.size:
            bucket = speaker_profile(int(spk)).descriptor_bucket
            groups[("speaker", int(spk))] = (features.clean[idx], all_speaker_captions(bucket))
    for lab_i, label in enumerate(ENV_LABELS):
        idx = np.flatnonzero(mask & (features.env_label == lab_i))
        if idx.size:
            groups[("env", label)] = (features.env[idx], all_env_captions(label))
    return groups


def train_clap(features, steps=1500, batch_classes=16, lr=1e-3, seed=0, log_every=250) -> ToyCLAP:
    """Batches draw distinct caption classes so no batch contains false negatives."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ToyCLAP()
    groups = clap_pairs(features)
    keys = list(groups)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for step in range(steps):
        pick = rng.choice(len(keys), size=min(batch_classes, len(keys)), replace=False)
        frames, captions = [], []
        for k in pick:
            clips, caps = groups[keys[k]]
            frames.append(clips[rng.integers(len(clips))])
            captions.append(caps[rng.integers(len(caps))])
        loss = clap_train_step(model, opt, np.stack(frames), captions)
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("clap step %d loss %.4f", step, loss)
    model.eval()
    return model


# ---------------------------------------------------------------- inference


@torch.no_grad()
def clap_embed_audio(model: ToyCLAP, clip_or_frames) -> np.ndarray:
    frames = latent_encode(clip_or_frames) if isinstance(clip_or_frames, AudioClip) else np.asarray(clip_or_frames)
    single = frames.ndim == 2
    out = model.audio_embedding(frames[None] if single else frames).double().numpy()
    return out[0] if single else out


@torch.no_grad()
def clap_embed_text(model: ToyCLAP, prompt) -> np.ndarray:
    single = isinstance(prompt, str)
    out = model.text_embedding([prompt] if single else list(prompt)).double().numpy()
    return out[0] if single else out

