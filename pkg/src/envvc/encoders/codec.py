"""Spectral latent codec: log-mel analysis and iterative phase-retrieval synthesis."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from envvc.audio import SAMPLE_RATE, AudioClip, AudioError

N_FFT = 1024
HOP = 640
N_MELS = 32
LOG_FLOOR = -10.0
FRAME_RATE = SAMPLE_RATE / HOP
_PAD = (N_FFT - HOP) // 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, fmin=0.0, fmax=None):
    """Triangular HTK-mel filters with unit peak, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


_MEL = mel_filterbank()
_WINDOW = np.hanning(N_FFT + 1)[:-1]


def n_frames(n_samples: int) -> int:
    return -(-n_samples // HOP)


def stft(x: np.ndarray) -> np.ndarray:
    """Frame ``i`` is centred on the middle of hop segment ``i``; returns ``(T, n_fft//2+1)``."""
    t = n_frames(x.size)
    padded = np.zeros(t * HOP + 2 * _PAD)
    padded[_PAD : _PAD + x.size] = x
    frames = sliding_window_view(padded, N_FFT)[::HOP][:t]
    return np.fft.rfft(frames * _WINDOW, axis=1)


def istft(spec: np.ndarray, n_samples: int) -> np.ndarray:
    t = spec.shape[0]
    frames = np.fft.irfft(spec, n=N_FFT, axis=1) * _WINDOW
    total = t * HOP + 2 * _PAD
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(t):
        out[i * HOP : i * HOP + N_FFT] += frames[i]
        norm[i * HOP : i * HOP + N_FFT] += _WINDOW**2
    out /= np.maximum(norm, 1e-8)
    return out[_PAD : _PAD + n_samples]


def mel_power(x: np.ndarray) -> np.ndarray:
    return np.abs(stft(x)) ** 2 @ _MEL.T


def log_clamp(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(p), LOG_FLOOR)


def latent_encode(clip: AudioClip) -> np.ndarray:
    """Log-mel frames ``(T, 32)`` at 25 frames/s, clamped at the log floor."""
    if clip.sample_rate != SAMPLE_RATE:
        raise AudioError(f"latent_encode expects {SAMPLE_RATE} Hz input, got {clip.sample_rate} Hz")
    if len(clip) == 0:
        raise AudioError("latent_encode: empty clip")
    return log_clamp(mel_power(clip.samples))


def _mel_to_linear(p: np.ndarray, iters: int = 60) -> np.ndarray:
    # non-negative fit under the KL divergence, which weighs quiet bands by their
    # relative error instead of letting loud neighbours dominate
    m = _MEL
    colsum = np.maximum(m.sum(axis=0), 1e-12)
    s = np.maximum(p @ np.linalg.pinv(m).T, 0.0) + 1e-12
    for _ in range(iters):
        s *= ((p / np.maximum(s @ m.T, 1e-30)) @ m) / colsum
    return s


def latent_decode(
    frames: np.ndarray, n_samples: int | None = None, iters: int = 32, rounds: int = 4, seed: int = 0,
    momentum: float = 0.99,
) -> AudioClip:
    """Invert log-mel frames by fast Griffin-Lim with mel-domain magnitude correction.

    Each round runs ``iters`` accelerated Griffin-Lim iterations, then rescales
    every linear bin by the geometric mean of its bands' power ratios.
    Frames at or below the log floor are treated as floor-level power.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != N_MELS:
        raise AudioError(f"expected frames shaped (T, {N_MELS}), got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise AudioError("latent_decode: non-finite frames")
    n_samples = frames.shape[0] * HOP if n_samples is None else n_samples
    target = np.exp(np.maximum(frames, LOG_FLOOR))
    log_target = np.log(target)
    colsum = np.maximum(_MEL.sum(axis=0), 1e-12)
    mag = np.sqrt(_mel_to_linear(target))
    spec = mag * np.exp(2j * np.pi * np.random.default_rng(seed).random(mag.shape))
    for r in range(rounds):
        prev = spec
        for _ in range(iters):
            proj = stft(istft(spec, n_samples))
            fresh = mag * np.exp(1j * np.angle(proj))
            spec = fresh + momentum * (fresh - prev)
            prev = fresh
        x = istft(prev, n_samples)
        if r == rounds - 1:
            break
        got = np.abs(stft(x)) ** 2 @ _MEL.T
        log_ratio = np.clip(log_target - np.log(np.maximum(got, 1e-30)), -10.0, 10.0)
        mag = mag * np.exp(0.5 * (log_ratio @ _MEL) / colsum)
        spec = mag * np.exp(1j * np.angle(prev))
    return AudioClip(x, SAMPLE_RATE)
