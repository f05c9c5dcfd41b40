"""Signal primitives: clips, reverb, mixing, synthetic RIRs and WAV I/O."""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
_PCM_SCALE = 32767.0


class AudioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def peak_normalize(self, peak: float = 1.0) -> "AudioClip":
        m = np.max(np.abs(self.samples)) if len(self) else 0.0
        if m == 0.0:
            return self
        return AudioClip(self.samples * (peak / m), self.sample_rate)


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    taps: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise AudioError("impulse response must be a non-empty 1-D sequence")
        if not np.any(taps != 0.0):
            raise AudioError("impulse response needs at least one nonzero tap")
        if not np.isfinite(np.sum(taps * taps)):
            raise AudioError("impulse response energy must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def direct_index(self) -> int:
        return int(np.flatnonzero(self.taps)[0])


def _check_rates(a: int, b: int, what: str):
    if a != b:
        raise AudioError(f"{what}: sample-rate mismatch ({a} Hz vs {b} Hz)")


def convolve(clip: AudioClip, ir: ImpulseResponse) -> AudioClip:
    """Linear convolution with ``ir``, truncated to the clip's length."""
    _check_rates(clip.sample_rate, ir.sample_rate, "convolve")
    if len(clip) == 0:
        raise AudioError("convolve: empty clip")
    full = signal.fftconvolve(clip.samples, ir.taps, mode="full")
    return AudioClip(full[: len(clip)], clip.sample_rate)


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if len(x) else 0.0


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Tile or truncate ``x`` to exactly ``n`` samples."""
    if len(x) == 0:
        return np.zeros(n)
    if len(x) >= n:
        return x[:n]
    reps = -(-n // len(x))
    return np.tile(x, reps)[:n]


def env_gain(speech: np.ndarray, env: np.ndarray, snr_db: float) -> float:
    """Gain for ``env`` such that the speech-to-scaled-env power ratio is ``snr_db``.

    Silent speech gives gain 1; a silent env gives gain 0.
    """
    ps = power(speech)
    pe = power(env)
    if ps == 0.0:
        return 1.0
    if pe == 0.0:
        return 0.0
    return float(np.sqrt(ps / (pe * 10.0 ** (snr_db / 10.0))))


def mix(speech: AudioClip, env: AudioClip, snr_db: float) -> AudioClip:
    _check_rates(speech.sample_rate, env.sample_rate, "mix")
    e = fit_length(env.samples, len(speech))
    g = env_gain(speech.samples, e, snr_db)
    return AudioClip(speech.samples + g * e, speech.sample_rate)


def rir_length(rt60_s: float, direct_delay_s: float, sample_rate: int) -> int:
    return int(np.ceil((direct_delay_s + 1.1 * rt60_s) * sample_rate)) + 1


def synth_rir(
    rt60_s: float,
    direct_delay_s: float = 0.0,
    sample_rate: int = SAMPLE_RATE,
    seed: int = 0,
    tail_gain: float = 0.1,
) -> ImpulseResponse:
    """Unit direct tap followed by exponentially decaying Gaussian noise.

    The tail amplitude falls by 60 dB after ``rt60_s`` seconds.
    """
    if not rt60_s > 0:
        raise AudioError(f"rt60 must be positive, got {rt60_s}")
    if direct_delay_s < 0:
        raise AudioError(f"direct delay must be non-negative, got {direct_delay_s}")
    rng = np.random.default_rng(seed)
    n = rir_length(rt60_s, direct_delay_s, sample_rate)
    d = int(round(direct_delay_s * sample_rate))
    taps = np.zeros(n)
    t = np.arange(1, n - d) / sample_rate
    taps[d + 1 :] = tail_gain * rng.standard_normal(t.size) * 10.0 ** (-3.0 * t / rt60_s)
    taps[d] = 1.0
    return ImpulseResponse(taps, sample_rate)


def segment_or_pad(clip: AudioClip, duration_s: float) -> AudioClip:
    if not duration_s > 0:
        raise AudioError(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * clip.sample_rate))
    x = clip.samples[:n]
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x))])
    return AudioClip(x, clip.sample_rate)


def write_wav(clip: AudioClip, path) -> Path:
    """Write 16-bit PCM mono little-endian WAV."""
    path = Path(path)
    x = clip.samples
    if len(x) and np.max(np.abs(x)) > 1.0:
        log.warning("%s: clamping %d samples outside [-1, 1]", path, int(np.sum(np.abs(x) > 1.0)))
        x = np.clip(x, -1.0, 1.0)
    pcm = np.round(x * _PCM_SCALE).astype("<i2")
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(clip.sample_rate)
            w.writeframes(pcm.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_wav(path) -> AudioClip:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioError(f"{path}: malformed WAV header ({exc})") from exc
    except EOFError as exc:
        raise AudioError(f"{path}: truncated WAV file") from exc
    if channels != 1:
        raise AudioError(f"{path}: unsupported channel count {channels} (mono only)")
    if width != 2:
        raise AudioError(f"{path}: unsupported sample width {8 * width} bits (PCM16 only)")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / _PCM_SCALE, rate)
