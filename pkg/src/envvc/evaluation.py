"""Embedding diagnostics, probe classifiers and conversion scoring."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from envvc._kernels import silhouette_samples
from envvc.corpus import VOCAB_SIZE
from envvc.data import ENV_LABELS
from envvc.encoders.clap import normalize_frames
from envvc.encoders.codec import LOG_FLOOR, N_MELS

log = logging.getLogger(__name__)


class ProbeError(ValueError):
    pass


# ------------------------------------------------------------------ geometry


def pca_project(vectors, k: int = 2):
    """Project mean-centred rows onto the top-``k`` covariance eigenvectors.

    Returns ``(projections (n, k), components (k, d), explained_variance (k,))``.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D array of vectors")
    n, d = x.shape
    if k < 1 or k > d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} vectors for a {k}-component projection")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:k]
    # fix the sign so projections are reproducible across LAPACK builds
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps = comps * flip[:, None]
    return xc @ comps.T, comps, s[:k] ** 2 / (n - 1)


def silhouette(vectors, labels) -> float:
    """Mean Euclidean silhouette; singleton clusters contribute 0."""
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    if x.shape[0] != labels.shape[0] or x.shape[0] == 0:
        raise ValueError("vectors and labels must be non-empty and aligned")
    _, dense = np.unique(labels, return_inverse=True)
    if dense.max() < 1:
        raise ValueError("silhouette needs at least two distinct labels")
    return float(silhouette_samples(x, dense).mean())


# -------------------------------------------------------------------- probes


class ContentProbe(nn.Module):
    """Dilated temporal convolutions over frames, then one classifier per token (two frames)."""

    def __init__(self, n_mels=N_MELS, width=128, n_classes=VOCAB_SIZE):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv1d(n_mels, width, 5, padding=2),
            nn.GELU(),
            nn.Conv1d(width, width, 5, padding=4, dilation=2),
            nn.GELU(),
            nn.Conv1d(width, width, 5, padding=2),
            nn.GELU(),
        )
        self.head = nn.Linear(2 * width, n_classes)

    def forward(self, x, n_tokens: int):
        # x: (B, T, C) normalised frames; token j owns frames 2j and 2j+1
        need = 2 * n_tokens
        if x.shape[1] < need:
            floor = float(normalize_frames(torch.tensor(LOG_FLOOR)))
            x = torch.cat([x, x.new_full((x.shape[0], need - x.shape[1], x.shape[2]), floor)], dim=1)
        h = self.convs(x.transpose(1, 2)).transpose(1, 2)[:, :need]
        return self.head(h.reshape(h.shape[0], n_tokens, -1))

    @torch.no_grad()
    def predict_tokens(self, frames, n_tokens: int | None = None) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        single = frames.ndim == 2
        x = normalize_frames(frames[None] if single else frames)
        if n_tokens is None:
            n_tokens = x.shape[1] // 2
        out = self(x, n_tokens).argmax(-1).numpy()
        return out[0] if single else out


def clip_statistics(frames) -> torch.Tensor:
    """Per-band mean, std, min and max over time, plus the mean absolute frame-to-frame change."""
    x = normalize_frames(frames)
    if x.dim() == 2:
        x = x[None]
    flux = (x[:, 1:] - x[:, :-1]).abs().mean(dim=1)
    return torch.cat([x.mean(1), x.std(1), x.amin(1), x.amax(1), flux], dim=1)


class EnvProbe(nn.Module):
    def __init__(self, n_mels=N_MELS, hidden=128, n_classes=len(ENV_LABELS)):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(5 * n_mels, hidden), nn.GELU(), nn.Linear(hidden, n_classes))

    def forward(self, stats):
        return self.net(stats)

    @torch.no_grad()
    def predict(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        single = frames.ndim == 2
        out = self(clip_statistics(frames)).argmax(-1).numpy()
        return out[0] if single else out


def _check_labels(labels):
    if np.unique(labels).size < 2:
        raise ProbeError("probe targets have a single label; nothing to learn")


def content_probe_data(features, mask):
    """(frames, tokens) pairs: clean tracks and mixtures of non-silent clips."""
    keep = mask & ~features.silent
    frames = np.concatenate([features.clean[keep], features.mixture[keep]])
    tokens = np.concatenate([features.content[keep], features.content[keep]])
    return frames, tokens


def train_content_probe(features, steps=3000, batch=16, lr=1e-3, seed=0, shuffle_labels=False) -> ContentProbe:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    frames, tokens = content_probe_data(features, features.train)
    _check_labels(tokens)
    x = normalize_frames(frames).float()
    targets = torch.as_tensor(tokens)
    if shuffle_labels:
        flat = targets.reshape(-1)
        targets = flat[torch.as_tensor(rng.permutation(flat.numel()))].reshape(targets.shape)
    n_tokens = targets.shape[1]
    probe = ContentProbe()
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for step in range(steps):
        pick = torch.as_tensor(rng.integers(len(x), size=batch))
        logits = probe(x[pick], n_tokens)
        loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets[pick].reshape(-1))
        opt.zero_grad()
        loss.backward()
        opt.step()
    probe.eval()
    return probe


def train_env_probe(features, steps=2000, batch=64, lr=1e-3, seed=0, shuffle_labels=False) -> EnvProbe:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    mask = features.train
    stats = clip_statistics(features.mixture[mask])
    targets = torch.as_tensor(features.env_label[mask])
    _check_labels(targets.numpy())
    if shuffle_labels:
        targets = targets[torch.as_tensor(rng.permutation(len(targets)))]
    probe = EnvProbe()
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for step in range(steps):
        pick = torch.as_tensor(rng.integers(len(targets), size=batch))
        loss = F.cross_entropy(probe(stats[pick]), targets[pick])
        opt.zero_grad()
        loss.backward()
        opt.step()
    probe.eval()
    return probe


def content_accuracy(probe: ContentProbe, frames, tokens) -> float:
    tokens = np.asarray(tokens)
    pred = probe.predict_tokens(frames, tokens.shape[-1])
    return float((pred == tokens).mean())


def env_accuracy(probe: EnvProbe, frames, labels) -> float:
    return float((probe.predict(frames) == np.asarray(labels)).mean())


# ------------------------------------------------------------------ reports


@dataclass
class EvalReport:
    metrics: dict
    config_hash: str = ""
    corpus_id: str = ""
    details: dict = field(default_factory=dict)

    METRIC_ORDER = ("content_preservation", "env_match", "timbre_match")

    def table(self) -> str:
        names = [m for m in self.METRIC_ORDER if m in self.metrics]
        names += sorted(m for m in self.metrics if m not in self.METRIC_ORDER)
        width = max(len(n) for n in names)
        return "\n".join(f"{n:<{width}}  {self.metrics[n]:.4f}" for n in names)

    def to_json(self) -> str:
        return json.dumps(
            {"metrics": self.metrics, "config_hash": self.config_hash, "corpus_id": self.corpus_id, "details": self.details},
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["metrics"], d.get("config_hash", ""), d.get("corpus_id", ""), d.get("details", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path


def nearest_speaker(embeddings, table: np.ndarray, ids) -> np.ndarray:
    """Speaker id whose table row has the highest cosine with each embedding (ties: lowest id)."""
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    tab = np.asarray(table, dtype=np.float64)
    ids = np.asarray(ids)
    order = np.argsort(ids, kind="stable")
    tab, ids = tab[order], ids[order]
    sims = (e / np.linalg.norm(e, axis=1, keepdims=True)) @ (tab / np.linalg.norm(tab, axis=1, keepdims=True)).T
    return ids[sims.argmax(axis=1)]


def score_conversions(outputs, requested_tokens, requested_env, requested_speaker, content_probe, env_probe, spk_net, tkb_ids, tkb_timbre) -> dict:
    """Probe-based metrics for a batch of converted latents ``(N, T, C)``."""
    from envvc.encoders.speaker import speaker_embed

    outputs = np.asarray(outputs, dtype=np.float32)
    requested_tokens = np.asarray(requested_tokens)
    content = float((content_probe.predict_tokens(outputs, requested_tokens.shape[-1]) == requested_tokens).mean())
    env = float((env_probe.predict(outputs) == np.asarray(requested_env)).mean())
    emb = speaker_embed(outputs, net=spk_net)
    timbre = float((nearest_speaker(emb, tkb_timbre, tkb_ids) == np.asarray(requested_speaker)).mean())
    return {"content_preservation": content, "env_match": env, "timbre_match": timbre}


# -------------------------------------------------------------------- plots


def emit_plots(raw, adapted, labels, out_dir, title_prefix="") -> list[Path]:
    """Write side-by-side-comparable PCA scatters of raw and adapted embeddings.

    One file per embedding set, points coloured by label. Output bytes are
    deterministic for identical inputs.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    raw = np.asarray(raw, dtype=np.float64)
    adapted = np.asarray(adapted, dtype=np.float64)
    labels = np.asarray(labels)
    if raw.size == 0 or adapted.size == 0 or labels.size == 0:
        raise ValueError("nothing to plot: empty embeddings")
    if not (len(raw) == len(adapted) == len(labels)):
        raise ValueError("raw, adapted and labels must have the same length")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    uniq = np.unique(labels)
    cmap = plt.get_cmap("tab10" if len(uniq) <= 10 else "tab20")
    paths = []
    for name, vecs in (("raw", raw), ("adapted", adapted)):
        proj, _, var = pca_project(vecs, 2)
        fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
        for i, lab in enumerate(uniq):
            sel = labels == lab
            ax.scatter(proj[sel, 0], proj[sel, 1], s=10, color=cmap(i % cmap.N), label=str(lab))
        ax.set_title(f"{title_prefix}{name} embeddings (PCA)")
        ax.set_xlabel(f"PC1 ({var[0]:.3g})")
        ax.set_ylabel(f"PC2 ({var[1]:.3g})")
        ax.legend(fontsize=6, markerscale=0.8, ncol=2, loc="best")
        fig.tight_layout()
        path = out_dir / f"pca_{name}.png"
        fig.savefig(path, format="png", metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
