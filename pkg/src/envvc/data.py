"""Corpus feature cache shared by all training phases."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from envvc.corpus import ENV_CLASSES, NO_ENV, ManifestRecord, load_manifest, load_record_audio
from envvc.encoders.codec import latent_encode

log = logging.getLogger(__name__)

ENV_LABELS = ENV_CLASSES + (NO_ENV,)


@dataclass
class CorpusFeatures:
    records: list
    clean: np.ndarray
    env: np.ndarray
    mixture: np.ndarray
    speaker: np.ndarray
    env_label: np.ndarray
    content: np.ndarray
    silent: np.ndarray
    train: np.ndarray

    def __len__(self):
        return len(self.records)

    @property
    def heldout(self) -> np.ndarray:
        return ~self.train


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def load_features(manifest_path, cache: bool = True) -> CorpusFeatures:
    """Log-mel frames for every (mixture, clean, env) track, cached next to the manifest."""
    manifest_path = Path(manifest_path)
    _, records = load_manifest(manifest_path)
    digest = _digest(manifest_path)
    cache_path = manifest_path.parent / f"features-{digest}.npz"
    if cache and cache_path.exists():
        z = np.load(cache_path)
        arrays = {k: z[k] for k in z.files}
    else:
        arrays = {k: [] for k in ("clean", "env", "mixture")}
        for rec in records:
            for kind in arrays:
                arrays[kind].append(latent_encode(load_record_audio(manifest_path, rec, kind)).astype(np.float32))
        arrays = {k: np.stack(v) for k, v in arrays.items()}
        if cache:
            np.savez(cache_path, **arrays)
            log.info("cached corpus features at %s", cache_path)
    return CorpusFeatures(
        records=records,
        clean=arrays["clean"],
        env=arrays["env"],
        mixture=arrays["mixture"],
        speaker=np.array([r.scene.speaker_id for r in records], dtype=np.int64),
        env_label=np.array([ENV_LABELS.index(r.scene.env_label) for r in records], dtype=np.int64),
        content=np.array([r.scene.content for r in records], dtype=np.int64),
        silent=np.array([r.scene.silent_speech for r in records], dtype=bool),
        train=np.array([r.split == "train" for r in records], dtype=bool),
    )


def record_by_path(records: list[ManifestRecord], manifest_path, wav_path) -> ManifestRecord | None:
    root = Path(manifest_path).parent.resolve()
    target = Path(wav_path).resolve()
    for rec in records:
        for rel in (rec.mixture_path, rec.clean_path, rec.env_path):
            if (root / rel).resolve() == target:
                return rec
    return None
