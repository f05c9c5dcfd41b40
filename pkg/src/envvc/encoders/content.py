"""Content tokenizer: ground-truth passthrough or a trained frame probe."""

from __future__ import annotations

import numpy as np

from envvc.audio import AudioClip
from envvc.corpus import SceneSpec, n_tokens_for
from envvc.encoders.codec import latent_encode


def tokenize_content(source, mode: str = "oracle", probe=None) -> np.ndarray:
    """Content tokens at 12.5 tokens/s.

    Oracle mode returns ``scene.content`` verbatim; probe mode decodes audio
    (or log-mel frames) with a trained content probe.
    """
    if mode == "oracle":
        if not isinstance(source, SceneSpec):
            raise TypeError("oracle mode needs the SceneSpec")
        return np.asarray(source.content, dtype=np.int64)
    if mode != "probe":
        raise ValueError(f"mode must be 'oracle' or 'probe', got {mode!r}")
    if probe is None:
        raise ValueError("probe mode needs a trained content probe (run `eval` first to train one)")
    if isinstance(source, SceneSpec):
        raise TypeError("probe mode decodes audio, not a SceneSpec")
    if isinstance(source, AudioClip):
        n_tokens = n_tokens_for(source.duration)
        return probe.predict_tokens(latent_encode(source), n_tokens)
    return probe.predict_tokens(np.asarray(source))
