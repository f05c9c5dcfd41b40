"""Retrieval-based timbre control.

An adapter maps CLAP embeddings into a space where clips cluster by speaker;
a small knowledge base stores one adapted centroid and one timbre embedding
per speaker, and a text prompt is turned into a timbre embedding by cosine
retrieval against the centroids.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from envvc.encoders.clap import D_CLAP, clap_embed_text

log = logging.getLogger(__name__)

ALPHA = 0.2
ORIENTATIONS = ("conventional", "paper")


class TKBError(ValueError):
    pass


# ------------------------------------------------------------------- adapter


class TimbreAdapter(nn.Module):
    """Per-embedding MLP, one self-attention fusion block over the set, mean pooling, L2 norm."""

    def __init__(self, dim=D_CLAP, hidden=128, heads=4):
        super().__init__()
        self.heads = heads
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x):
        """``x``: ``(N, D)`` for one set or ``(B, N, D)`` for a batch of equal-size sets."""
        x = torch.as_tensor(x, dtype=self.out.weight.dtype)
        single = x.dim() == 2
        if single:
            x = x[None]
        if x.shape[1] == 0:
            raise ValueError("adapter input set is empty")
        b, n, d = x.shape
        h = self.mlp(x)
        q, k, v = self.qkv(self.norm(h)).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-1, -2) / (d // self.heads) ** 0.5).softmax(dim=-1)
        h = h + self.out((att @ v).transpose(1, 2).reshape(b, n, d))
        y = F.normalize(h.mean(dim=1), dim=-1)
        return y[0] if single else y


@torch.no_grad()
def adapt(adapter: TimbreAdapter, embeddings) -> np.ndarray:
    """Adapted embedding of one set ``(N, D)`` (or a single ``(D,)`` vector)."""
    x = np.ascontiguousarray(embeddings, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[0] == 0:
        raise ValueError("adapter input set is empty")
    return adapter(torch.from_numpy(x)).double().numpy()


@torch.no_grad()
def adapt_each(adapter: TimbreAdapter, embeddings) -> np.ndarray:
    """Adapt every row as its own singleton set."""
    x = torch.as_tensor(np.ascontiguousarray(embeddings, dtype=np.float64))
    return adapter(x[:, None, :]).double().numpy()


# ------------------------------------------------------------ triplet loss


def triplet_loss(anchor, positive, negative, alpha: float = ALPHA, orientation: str = "conventional", reduction="mean"):
    """Cosine triplet hinge.

    ``conventional``: ``max(cos(a, n) - cos(a, p) + alpha, 0)``, which pulls
    positives in. ``paper`` swaps the two similarities.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    a, p, n = (torch.as_tensor(v) for v in (anchor, positive, negative))
    for name, v in (("anchor", a), ("positive", p), ("negative", n)):
        if bool((v.norm(dim=-1) == 0).any()):
            raise ValueError(f"zero-norm {name} vector")
    sim_p = F.cosine_similarity(a, p, dim=-1, eps=0.0)
    sim_n = F.cosine_similarity(a, n, dim=-1, eps=0.0)
    gap = sim_n - sim_p if orientation == "conventional" else sim_p - sim_n
    loss = torch.clamp(gap + alpha, min=0.0)
    return loss.mean() if reduction == "mean" else loss


@dataclass
class TripletBatch:
    """Sets of CLAP embeddings ``(B, N, D)`` plus the speaker ids that justify each role."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    anchor_speakers: np.ndarray
    positive_speakers: np.ndarray
    negative_speakers: np.ndarray

    def __post_init__(self):
        if not (len(self.anchors) == len(self.positives) == len(self.negatives)) or len(self.anchors) == 0:
            raise ValueError("triplet batch parts must be non-empty and equally long")
        if np.any(self.anchor_speakers != self.positive_speakers):
            raise ValueError("every positive must share its anchor's speaker")
        if np.any(self.anchor_speakers == self.negative_speakers):
            raise ValueError("every negative must come from a different speaker than its anchor")


def train_adapter_step(adapter, optimizer, batch: TripletBatch, alpha=ALPHA, orientation="conventional") -> float:
    a = adapter(torch.as_tensor(batch.anchors))
    p = adapter(torch.as_tensor(batch.positives))
    n = adapter(torch.as_tensor(batch.negatives))
    loss = triplet_loss(a, p, n, alpha, orientation)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def sample_triplets(rng, embeddings, speakers, batch: int, set_size: int = 1) -> TripletBatch:
    embeddings = np.asarray(embeddings, dtype=np.float32)
    speakers = np.asarray(speakers)
    ids = np.unique(speakers)
    if ids.size < 2:
        raise ValueError("triplets need at least two speakers")
    by_spk = {int(s): np.flatnonzero(speakers == s) for s in ids}
    a_spk = rng.choice(ids, size=batch)
    n_spk = np.array([rng.choice(ids[ids != s]) for s in a_spk])

    def draw(spk_ids):
        return np.stack([embeddings[rng.choice(by_spk[int(s)], size=set_size)] for s in spk_ids])

    return TripletBatch(draw(a_spk), draw(a_spk), draw(n_spk), a_spk, a_spk.copy(), n_spk)


def train_adapter(
    embeddings, speakers, steps=2000, batch=64, lr=1e-3, alpha=ALPHA, orientation="conventional", set_size=1, seed=0,
    log_every=500,
) -> tuple[TimbreAdapter, list[float]]:
    """Train on CLAP audio embeddings with speaker labels; returns the adapter and its loss curve."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    adapter = TimbreAdapter(dim=np.asarray(embeddings).shape[-1])
    opt = torch.optim.Adam(adapter.parameters(), lr=lr)
    curve = []
    for step in range(steps):
        loss = train_adapter_step(adapter, opt, sample_triplets(rng, embeddings, speakers, batch, set_size), alpha, orientation)
        curve.append(loss)
        if log_every and (step % log_every == 0 or step == steps - 1):
            log.info("adapter step %d loss %.4f", step, loss)
    adapter.eval()
    return adapter, curve


# ---------------------------------------------------------- knowledge base


@dataclass
class TimbreKnowledgeBase:
    speaker_ids: np.ndarray  # (S,) int64, unique
    centroids: np.ndarray  # (S, D_clap), unit norm
    timbres: np.ndarray  # (S, D_spk)

    MAGIC = b"ENVVCTKB"
    VERSION = 1

    def __post_init__(self):
        self.speaker_ids = np.asarray(self.speaker_ids, dtype=np.int64)
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.timbres = np.asarray(self.timbres, dtype=np.float64)
        if len(np.unique(self.speaker_ids)) != len(self.speaker_ids):
            raise TKBError("speaker ids in a knowledge base must be unique")
        if not (len(self.speaker_ids) == len(self.centroids) == len(self.timbres)):
            raise TKBError("knowledge base columns have different lengths")

    def __len__(self):
        return len(self.speaker_ids)

    @property
    def d_clap(self) -> int:
        return self.centroids.shape[1]

    @property
    def d_spk(self) -> int:
        return self.timbres.shape[1]

    def timbre_of(self, speaker_id: int) -> np.ndarray:
        hit = np.flatnonzero(self.speaker_ids == speaker_id)
        if hit.size == 0:
            raise KeyError(f"speaker {speaker_id} is not in the knowledge base")
        return self.timbres[hit[0]]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        parts = [self.MAGIC, struct.pack("<IIII", self.VERSION, self.d_clap, self.d_spk, len(self))]
        for sid, c, t in zip(self.speaker_ids, self.centroids, self.timbres):
            parts.append(struct.pack("<q", int(sid)))
            parts.append(c.astype("<f4").tobytes())
            parts.append(t.astype("<f4").tobytes())
        path.write_bytes(b"".join(parts))
        return path

    @classmethod
    def load(cls, path) -> "TimbreKnowledgeBase":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"knowledge base not found: {path}")
        data = path.read_bytes()
        if data[:8] != cls.MAGIC:
            raise TKBError(f"{path}: not a timbre knowledge base file")
        version, d_clap, d_spk, count = struct.unpack_from("<IIII", data, 8)
        if version != cls.VERSION:
            raise TKBError(f"{path}: unsupported knowledge base version {version}")
        rec = 8 + 4 * (d_clap + d_spk)
        if len(data) != 24 + count * rec:
            raise TKBError(f"{path}: truncated or oversized file")
        ids = np.empty(count, dtype=np.int64)
        cent = np.empty((count, d_clap))
        timb = np.empty((count, d_spk))
        off = 24
        for i in range(count):
            (ids[i],) = struct.unpack_from("<q", data, off)
            cent[i] = np.frombuffer(data, "<f4", d_clap, off + 8)
            timb[i] = np.frombuffer(data, "<f4", d_spk, off + 8 + 4 * d_clap)
            off += rec
        return cls(ids, cent, timb)


def build_tkb(adapted, speakers, timbre_table: dict) -> TimbreKnowledgeBase:
    """One entry per speaker: normalised mean of its clips' adapted embeddings plus its timbre.

    ``adapted`` holds one adapted embedding per clip; ``timbre_table`` maps
    speaker id to timbre embedding. Speakers without clips are skipped.
    """
    adapted = np.asarray(adapted, dtype=np.float64)
    speakers = np.asarray(speakers)
    ids, cents, timbres = [], [], []
    for sid in sorted(int(s) for s in timbre_table):
        rows = adapted[speakers == sid]
        if rows.shape[0] == 0:
            warnings.warn(f"speaker {sid} has no clips; left out of the knowledge base", stacklevel=2)
            continue
        m = rows.mean(axis=0)
        ids.append(sid)
        cents.append(m / np.linalg.norm(m))
        timbres.append(np.asarray(timbre_table[sid], dtype=np.float64))
    if not ids:
        raise TKBError("no speaker had any clips")
    return TimbreKnowledgeBase(np.array(ids), np.stack(cents), np.stack(timbres))


def retrieve(query, tkb: TimbreKnowledgeBase) -> tuple[int, np.ndarray]:
    """Entry with the highest cosine similarity to ``query``; ties go to the lowest speaker id."""
    if len(tkb) == 0:
        raise TKBError("knowledge base is empty")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (tkb.d_clap,):
        raise TKBError(f"query has shape {q.shape}, knowledge base expects ({tkb.d_clap},)")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise TKBError("zero query vector")
    sims = tkb.centroids @ (q / qn) / np.linalg.norm(tkb.centroids, axis=1)
    best = sims.max()
    i = min(np.flatnonzero(sims == best), key=lambda j: tkb.speaker_ids[j])
    return int(tkb.speaker_ids[i]), tkb.timbres[i]


def text_to_timbre(spk_text: str, clap, adapter: TimbreAdapter, tkb: TimbreKnowledgeBase) -> tuple[int, np.ndarray]:
    """Encode a speaker description with the text tower, adapt it, and retrieve a timbre."""
    return retrieve(adapt(adapter, clap_embed_text(clap, spk_text)), tkb)
