"""Synthetic, self-labelling corpus: parametric speakers, pseudo-phoneme
content, procedural environments, captions, and the augmentation sampler."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import ndimage, signal

from envvc import _kernels
from envvc.audio import (
    SAMPLE_RATE,
    AudioClip,
    convolve,
    env_gain,
    fit_length,
    mix,
    read_wav,
    synth_rir,
    write_wav,
)

log = logging.getLogger(__name__)

VOCAB_SIZE = 32
SILENCE = 0
TOKEN_RATE = 12.5
SPEECH_RMS = 0.03
ENV_RMS = 0.03

ENV_CLASSES = ("white_noise", "babble", "rain", "traffic_rumble", "bells")
NO_ENV = "none"

MANIFEST_SCHEMA = "envvc-manifest"
MANIFEST_VERSION = 1


class CorpusError(ValueError):
    pass


# ----------------------------------------------------------------- tokens

_F1 = (280.0, 450.0, 660.0, 900.0)
_F2 = (850.0, 1150.0, 1500.0, 1900.0, 2400.0, 3000.0)
_FRICATIVE_CENTERS = (1800.0, 2600.0, 3400.0, 4200.0, 5000.0, 5800.0, 6600.0)


def _token_table():
    freqs = np.zeros((VOCAB_SIZE, 3))
    bws = np.ones((VOCAB_SIZE, 3)) * 100.0
    voiced = np.zeros(VOCAB_SIZE, dtype=bool)
    level = np.zeros(VOCAB_SIZE)
    tok = 1
    for f1 in _F1:
        for f2 in _F2:
            f3 = max(2500.0, f2 + 700.0)
            freqs[tok] = (f1, f2, f3)
            bws[tok] = (90.0, 110.0, 170.0)
            voiced[tok] = True
            level[tok] = 1.0
            tok += 1
    for fc in _FRICATIVE_CENTERS:
        freqs[tok] = (0.9 * fc, fc, 1.1 * fc)
        bws[tok] = (500.0, 500.0, 500.0)
        level[tok] = 0.5
        tok += 1
    assert tok == VOCAB_SIZE
    freqs[SILENCE] = (500.0, 1500.0, 2500.0)
    return freqs, bws, voiced, level


TOKEN_FORMANTS, TOKEN_BANDWIDTHS, TOKEN_VOICED, TOKEN_LEVEL = _token_table()
FORMANT_AMPLITUDES = (1.0, 0.6, 0.35)


def check_tokens(content) -> np.ndarray:
    ids = np.asarray(content, dtype=np.int64)
    bad = ids[(ids < 0) | (ids >= VOCAB_SIZE)]
    if bad.size:
        raise CorpusError(f"unknown token id {int(bad[0])} (alphabet is 0..{VOCAB_SIZE - 1})")
    return ids


def n_tokens_for(duration_s: float, token_rate: float = TOKEN_RATE) -> int:
    return int(round(duration_s * token_rate))


def random_content(rng: np.random.Generator, n_tokens: int, p_silence: float = 0.15) -> np.ndarray:
    """Runs of 1-3 identical tokens, silence with probability ``p_silence`` per run."""
    out = np.zeros(n_tokens, dtype=np.int64)
    i = 0
    while i < n_tokens:
        run = int(rng.integers(1, 4))
        tok = SILENCE if rng.random() < p_silence else int(rng.integers(1, VOCAB_SIZE))
        out[i : i + run] = tok
        i += run
    return out


# ---------------------------------------------------------------- speakers

PITCH_LEVELS_HZ = (95.0, 140.0, 205.0, 300.0)
TILT_LEVELS_DB = (-9.0, -6.0, -3.0, 0.0)
PITCH_WORDS = (("deep", "bass"), ("low", "mellow"), ("high", "light"), ("shrill", "squeaky"))
BRIGHT_WORDS = (("dark", "muffled"), ("warm", "soft"), ("bright", "clear"), ("sharp", "brilliant"))


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    f0_hz: float
    spectral_tilt_db_oct: float
    vibrato_hz: float
    vibrato_depth: float
    descriptor_bucket: tuple

    def __post_init__(self):
        if not 80.0 <= self.f0_hz <= 400.0:
            raise CorpusError(f"f0 {self.f0_hz} Hz outside [80, 400]")


def speaker_profile(speaker_id: int) -> SpeakerProfile:
    """Deterministic profile on a 4x4 (pitch, brightness) grid.

    Ids beyond 16 revisit the grid with a small f0 offset so parameter
    tuples stay distinct.
    """
    if speaker_id < 0:
        raise CorpusError(f"speaker id must be non-negative, got {speaker_id}")
    cell = speaker_id % 16
    pitch, bright = cell // 4, cell % 4
    lap = speaker_id // 16
    f0 = PITCH_LEVELS_HZ[pitch] * (1.0 + 0.03 * lap)
    return SpeakerProfile(
        speaker_id=speaker_id,
        f0_hz=float(f0),
        spectral_tilt_db_oct=TILT_LEVELS_DB[bright],
        vibrato_hz=4.5 + 0.1 * cell,
        vibrato_depth=0.006 + 0.001 * (cell % 3),
        descriptor_bucket=(pitch, bright),
    )


# ------------------------------------------------------------------ speech


def _f0_contour(profile: SpeakerProfile, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    return profile.f0_hz * (1.0 + profile.vibrato_depth * np.sin(2.0 * np.pi * profile.vibrato_hz * t))


def excitation(profile: SpeakerProfile, content, sample_rate: int = SAMPLE_RATE, seed: int = 0) -> np.ndarray:
    """Source signal before formant filtering: unit-power pulse train in voiced
    blocks, unit-power noise in unvoiced blocks, zeros in silence."""
    ids = check_tokens(content)
    block = int(round(sample_rate / TOKEN_RATE))
    n = ids.size * block
    f0 = _f0_contour(profile, n, sample_rate)
    phase = np.cumsum(2.0 * np.pi * f0 / sample_rate)
    k = int(0.95 * (sample_rate / 2) / (profile.f0_hz * (1.0 + profile.vibrato_depth)))
    pulses = _kernels.harmonic_sum(phase, k, _kernels.schroeder_offsets(k)) / np.sqrt(k / 2.0)
    noise = np.random.default_rng(seed).standard_normal(n)
    per_sample = np.repeat(ids, block)
    voiced = TOKEN_VOICED[per_sample]
    silent = per_sample == SILENCE
    exc = np.where(voiced, pulses, noise)
    exc[silent] = 0.0
    return exc


def _tilt(x: np.ndarray, tilt_db_oct: float, sample_rate: int) -> np.ndarray:
    spec = np.fft.rfft(x)
    f = np.maximum(np.fft.rfftfreq(x.size, 1.0 / sample_rate), 50.0)
    gain = (f / 500.0) ** (tilt_db_oct / (20.0 * np.log10(2.0)))
    return np.fft.irfft(spec * gain, n=x.size)


def _envelope(active: np.ndarray, ramp: int) -> np.ndarray:
    """0 on silence, raised-cosine ramps of ``ramp`` samples inside active runs."""
    if not active.any():
        return np.zeros(active.size)
    padded = np.concatenate([[False], active, [False]])
    dist = ndimage.distance_transform_edt(padded)[1:-1]
    return np.sin(0.5 * np.pi * np.clip(dist / ramp, 0.0, 1.0)) ** 2


_SUB_BLOCK = 32
_GLIDE_SUBS = 5


def _formant_track(ids: np.ndarray, block: int):
    """Per-sub-block resonator settings, gliding over ~10 ms at token changes."""
    reps = block // _SUB_BLOCK
    f = np.repeat(TOKEN_FORMANTS[ids], reps, axis=0)
    b = np.repeat(TOKEN_BANDWIDTHS[ids], reps, axis=0)
    f = ndimage.uniform_filter1d(f, size=_GLIDE_SUBS, axis=0, mode="nearest")
    b = ndimage.uniform_filter1d(b, size=_GLIDE_SUBS, axis=0, mode="nearest")
    return f, b, _SUB_BLOCK


def _formant_filter(x, formants, bandwidths, sub, sample_rate):
    """Parallel formant bank: one resonator per formant, summed with fixed weights."""
    out = np.zeros_like(x)
    for k, amp in enumerate(FORMANT_AMPLITUDES):
        out += amp * _kernels.resonator_cascade(x, formants[:, k : k + 1], bandwidths[:, k : k + 1], sub, sample_rate)
    return out


def render_speech(
    profile: SpeakerProfile, content, sample_rate: int = SAMPLE_RATE, seed: int = 0
) -> AudioClip:
    """Harmonic-plus-noise synthesis, one 80 ms block per token."""
    ids = check_tokens(content)
    block = int(round(sample_rate / TOKEN_RATE))
    n = ids.size * block
    if not np.any(ids != SILENCE):
        return AudioClip(np.zeros(n), sample_rate)
    exc = excitation(profile, ids, sample_rate, seed)
    formants, bandwidths, sub = _formant_track(ids, block)
    probe = _formant_filter(exc, formants, bandwidths, sub, sample_rate)
    probe = _tilt(probe, profile.spectral_tilt_db_oct, sample_rate)

    # second pass with the excitation rescaled per block, so loudness is set by
    # the token and not by the filter gain
    rms = np.sqrt(np.mean(probe.reshape(ids.size, block) ** 2, axis=1))
    active = ids != SILENCE
    gain = np.zeros(ids.size)
    gain[active] = TOKEN_LEVEL[ids[active]] / np.maximum(rms[active], 1e-12)
    y = _formant_filter(exc * np.repeat(gain, block), formants, bandwidths, sub, sample_rate)
    y = _tilt(y, profile.spectral_tilt_db_oct, sample_rate)
    y = y * _envelope(np.repeat(active, block), ramp=160)

    active_samples = np.repeat(active, block)
    level = np.sqrt(np.mean(y[active_samples] ** 2))
    return AudioClip(y * (SPEECH_RMS / level), sample_rate)


# ------------------------------------------------------------- environments


def _white_noise(rng, n, sample_rate, params):
    return rng.standard_normal(n)


def _babble(rng, n, sample_rate, params):
    block = int(round(sample_rate / TOKEN_RATE))
    n_blocks = -(-n // block)
    out = np.zeros(n)
    t = np.arange(n) / sample_rate
    for _ in range(int(params.get("voices", 6))):
        f0 = rng.uniform(100.0, 260.0)
        phase = np.cumsum(2.0 * np.pi * f0 * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)) / sample_rate)
        k = int(0.9 * (sample_rate / 2) / (f0 * 1.02))
        src = _kernels.harmonic_sum(phase, k, _kernels.schroeder_offsets(k))
        ids = rng.integers(1, 25, size=n_blocks)
        v = _kernels.resonator_cascade(src, TOKEN_FORMANTS[ids], TOKEN_BANDWIDTHS[ids], block, sample_rate)
        syll = np.abs(np.sin(np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, np.pi)))
        v = v * syll / (np.std(v) + 1e-12)
        out += v
    return out


def _rain(rng, n, sample_rate, params):
    density = float(params.get("density", 1500.0))
    drops = np.zeros(n)
    count = rng.poisson(density * n / sample_rate)
    drops[rng.integers(0, n, size=count)] += rng.lognormal(0.0, 0.4, size=count)
    hiss = 0.3 * rng.standard_normal(n)
    x = np.diff(drops + hiss, prepend=0.0)
    fc = float(params.get("center_hz", 4000.0))
    return _kernels.resonator_cascade(x, [[fc]], [[3000.0]], n, sample_rate)


def _traffic(rng, n, sample_rate, params):
    cutoff = float(params.get("cutoff_hz", 100.0))
    sos = signal.butter(2, cutoff, btype="low", fs=sample_rate, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n))
    t = np.arange(n) / sample_rate
    dur = n / sample_rate
    env = np.full(n, 0.3)
    for _ in range(int(params.get("cars", 3))):
        c = rng.uniform(0.0, dur)
        w = rng.uniform(0.8, 2.0)
        env += np.exp(-0.5 * ((t - c) / w) ** 2)
    return x * env


_BELL_RATIOS = np.array([0.5, 1.0, 1.19, 1.5, 2.0, 2.52, 3.01])
_BELL_DECAYS = np.array([1.5, 1.2, 0.9, 0.7, 0.5, 0.35, 0.25])


def _bells(rng, n, sample_rate, params):
    fund = float(params.get("fundamental_hz", 600.0))
    interval = float(params.get("interval_s", 1.0))
    strikes = np.zeros(n)
    pos = rng.uniform(0.0, interval)
    while pos * sample_rate < n:
        strikes[int(pos * sample_rate)] = rng.uniform(0.6, 1.0)
        pos += interval * rng.uniform(0.8, 1.2)
    tk = np.arange(int(2.0 * sample_rate)) / sample_rate
    kernel = np.zeros(tk.size)
    for ratio, decay in zip(_BELL_RATIOS, _BELL_DECAYS):
        f = fund * ratio
        if f < 0.45 * sample_rate:
            kernel += np.sin(2 * np.pi * f * tk) * np.exp(-tk / decay)
    return signal.fftconvolve(strikes, kernel)[:n]


_ENV_GENERATORS = {
    "white_noise": _white_noise,
    "babble": _babble,
    "rain": _rain,
    "traffic_rumble": _traffic,
    "bells": _bells,
}


def sample_env_params(rng: np.random.Generator, env_class: str) -> dict:
    if env_class == "white_noise":
        return {}
    if env_class == "babble":
        return {"voices": int(rng.integers(4, 9))}
    if env_class == "rain":
        return {"density": float(rng.uniform(800.0, 3000.0)), "center_hz": float(rng.uniform(3000.0, 5000.0))}
    if env_class == "traffic_rumble":
        return {"cutoff_hz": float(rng.uniform(60.0, 150.0)), "cars": int(rng.integers(2, 5))}
    if env_class == "bells":
        return {"fundamental_hz": float(rng.uniform(400.0, 900.0)), "interval_s": float(rng.uniform(0.6, 1.5))}
    raise CorpusError(f"unknown environment class {env_class!r} (expected one of {', '.join(ENV_CLASSES)})")


def render_env(
    env_class: str, env_params: dict | None = None, sample_rate: int = SAMPLE_RATE, seed: int = 0, duration_s: float = 10.0
) -> AudioClip:
    try:
        gen = _ENV_GENERATORS[env_class]
    except KeyError:
        raise CorpusError(
            f"unknown environment class {env_class!r} (expected one of {', '.join(ENV_CLASSES)})"
        ) from None
    n = int(round(duration_s * sample_rate))
    x = gen(np.random.default_rng(seed), n, sample_rate, env_params or {})
    x = x - np.mean(x)
    return AudioClip(x * (ENV_RMS / np.sqrt(np.mean(x**2))), sample_rate)


# ------------------------------------------------------------------ scenes


@dataclass
class CorpusConfig:
    n_speakers: int = 16
    clips_per_speaker: int = 40
    heldout_per_speaker: int = 8
    env_classes: tuple = ENV_CLASSES
    p_rir: float = 0.5
    p_env: float = 0.5
    p_silent: float = 0.2
    snr_db_range: tuple = (5.0, 25.0)
    rt60_range: tuple = (0.2, 0.6)
    delay_range: tuple = (0.0, 0.01)
    duration_s: float = 10.0
    sample_rate: int = SAMPLE_RATE
    seed: int = 0
    speakers: tuple | None = None

    def __post_init__(self):
        self.env_classes = tuple(self.env_classes)
        self.snr_db_range = tuple(self.snr_db_range)
        self.rt60_range = tuple(self.rt60_range)
        self.delay_range = tuple(self.delay_range)
        if self.speakers is not None:
            self.speakers = tuple(int(s) for s in self.speakers)

    @property
    def speaker_pool(self) -> tuple:
        if self.speakers is not None:
            return self.speakers
        return tuple(range(self.n_speakers))

    @property
    def n_tokens(self) -> int:
        return n_tokens_for(self.duration_s)


@dataclass(frozen=True)
class SceneSpec:
    speaker_id: int
    content: tuple
    env_class: str | None
    env_params: dict = field(default_factory=dict)
    snr_db: float = 10.0
    apply_rir: bool = False
    rir_params: tuple = (0.3, 0.0, 0)
    silent_speech: bool = False
    seed: int = 0

    @property
    def has_env(self) -> bool:
        return self.env_class is not None

    @property
    def env_label(self) -> str:
        return self.env_class if self.env_class is not None else NO_ENV

    def to_dict(self) -> dict:
        d = asdict(self)
        d["content"] = [int(c) for c in self.content]
        d["rir_params"] = [float(self.rir_params[0]), float(self.rir_params[1]), int(self.rir_params[2])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["content"] = tuple(int(c) for c in d["content"])
        r = d["rir_params"]
        d["rir_params"] = (float(r[0]), float(r[1]), int(r[2]))
        return cls(**d)


def sample_scene(rng: np.random.Generator, config: CorpusConfig, speaker_id: int | None = None) -> SceneSpec:
    """Draw one training recipe; RIR, env mixing and silent speech are independent coin flips."""
    pool = config.speaker_pool
    if not pool:
        raise CorpusError("speaker pool is empty")
    if speaker_id is None:
        speaker_id = int(pool[int(rng.integers(len(pool)))])
    content = random_content(rng, config.n_tokens)
    apply_rir = bool(rng.random() < config.p_rir)
    has_env = bool(rng.random() < config.p_env)
    silent = bool(rng.random() < config.p_silent)
    env_class = str(config.env_classes[int(rng.integers(len(config.env_classes)))])
    env_params = sample_env_params(rng, env_class)
    snr_db = float(rng.uniform(*config.snr_db_range))
    rir_params = (float(rng.uniform(*config.rt60_range)), float(rng.uniform(*config.delay_range)), int(rng.integers(2**31)))
    seed = int(rng.integers(2**31))
    if silent:
        content = np.zeros_like(content)
    return SceneSpec(
        speaker_id=int(speaker_id),
        content=tuple(int(c) for c in content),
        env_class=env_class if has_env else None,
        env_params=env_params if has_env else {},
        snr_db=snr_db,
        apply_rir=apply_rir,
        rir_params=rir_params,
        silent_speech=silent,
        seed=seed,
    )


def _duration(scene: SceneSpec) -> float:
    return len(scene.content) / TOKEN_RATE


def render_clean(scene: SceneSpec, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    n = int(round(_duration(scene) * sample_rate))
    if scene.silent_speech:
        return AudioClip(np.zeros(n), sample_rate)
    return render_speech(speaker_profile(scene.speaker_id), scene.content, sample_rate, seed=scene.seed)


def render_scene_env(scene: SceneSpec, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    n = int(round(_duration(scene) * sample_rate))
    if not scene.has_env:
        return AudioClip(np.zeros(n), sample_rate)
    return render_env(scene.env_class, scene.env_params, sample_rate, seed=scene.seed + 1, duration_s=_duration(scene))


def scene_rir(scene: SceneSpec, sample_rate: int = SAMPLE_RATE):
    rt60, delay, seed = scene.rir_params
    return synth_rir(rt60, delay, sample_rate, seed)


def compose_mixture(scene: SceneSpec, sample_rate: int = SAMPLE_RATE):
    """Return ``(mixture, clean, env)``; ``env`` is the unscaled environment track."""
    clean = render_clean(scene, sample_rate)
    env = render_scene_env(scene, sample_rate)
    wet = convolve(clean, scene_rir(scene, sample_rate)) if scene.apply_rir else clean
    mixture = mix(wet, env, scene.snr_db) if scene.has_env else wet
    return mixture, clean, env


def scene_env_gain(scene: SceneSpec, wet: AudioClip, env: AudioClip) -> float:
    return env_gain(wet.samples, fit_length(env.samples, len(wet)), scene.snr_db)


# ----------------------------------------------------------------- captions

ENV_PHRASES = {
    "white_noise": ("static hiss", "white noise"),
    "babble": ("people chattering", "a crowd talking"),
    "rain": ("rain falling", "a rainstorm"),
    "traffic_rumble": ("traffic rumbling", "passing cars"),
    "bells": ("bells ringing", "church bells"),
    NO_ENV: ("silence", "a quiet room"),
}


def env_caption(env_label: str, variant: int = 0) -> str:
    phrases = ENV_PHRASES[env_label]
    return f"the sound of {phrases[variant % len(phrases)]}"


def speaker_caption(bucket, variant: int = 0) -> str:
    pitch, bright = bucket
    pw = PITCH_WORDS[pitch][variant % 2]
    bw = BRIGHT_WORDS[bright][(variant // 2) % 2]
    return f"a {pw} {bw} voice"


def caption_for(scene: SceneSpec, kind: str) -> str:
    rng = np.random.default_rng([scene.seed, 17])
    variant = int(rng.integers(4))
    if kind == "env":
        return env_caption(scene.env_label, variant)
    if kind == "speaker":
        return speaker_caption(speaker_profile(scene.speaker_id).descriptor_bucket, variant)
    raise CorpusError(f"caption kind must be 'env' or 'speaker', got {kind!r}")


def all_env_captions(label: str) -> list[str]:
    return sorted({env_caption(label, v) for v in range(4)})


def all_speaker_captions(bucket) -> list[str]:
    return sorted({speaker_caption(bucket, v) for v in range(4)})


def caption_vocabulary() -> list[str]:
    words = set()
    for label in ENV_PHRASES:
        for c in all_env_captions(label):
            words.update(c.split())
    for p in range(4):
        for b in range(4):
            for c in all_speaker_captions((p, b)):
                words.update(c.split())
    return sorted(words)


# ------------------------------------------------------------------ corpus


@dataclass(frozen=True)
class ManifestRecord:
    index: int
    split: str
    scene: SceneSpec
    mixture_path: str
    clean_path: str
    env_path: str
    env_caption: str
    speaker_caption: str

    def to_json(self) -> str:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        d["scene"] = SceneSpec.from_dict(d["scene"])
        return cls(**d)


def plan_scenes(config: CorpusConfig, limit: int | None = None) -> Iterator[tuple[int, str, SceneSpec]]:
    """Balanced scene plan: clip slots interleaved across speakers."""
    rng = np.random.default_rng(config.seed)
    pool = config.speaker_pool
    if not pool:
        raise CorpusError("speaker pool is empty")
    per_speaker = config.clips_per_speaker + config.heldout_per_speaker
    index = 0
    for slot in range(per_speaker):
        split = "train" if slot < config.clips_per_speaker else "heldout"
        for spk in pool:
            if limit is not None and index >= limit:
                return
            yield index, split, sample_scene(rng, config, speaker_id=spk)
            index += 1


def iter_scenes(config: CorpusConfig, limit: int | None = None):
    """Streaming mode: yield ``(index, split, scene, mixture, clean, env)`` without touching disk."""
    for index, split, scene in plan_scenes(config, limit):
        mixture, clean, env = compose_mixture(scene, config.sample_rate)
        yield index, split, scene, mixture, clean, env


def _config_dict(config: CorpusConfig) -> dict:
    d = asdict(config)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def build_corpus(config: CorpusConfig, out_dir, limit: int | None = None) -> Path:
    """Render scenes to WAV triples and write ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {wav_dir}: {exc}") from exc
    header = {"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION, "config": _config_dict(config)}
    lines = [json.dumps(header, sort_keys=True)]
    for index, split, scene, mixture, clean, env in iter_scenes(config, limit):
        stem = f"{index:05d}"
        paths = {}
        for kind, clip in (("mixture", mixture), ("clean", clean), ("env", env)):
            rel = f"wav/{stem}_{kind}.wav"
            write_wav(clip, out_dir / rel)
            paths[kind] = rel
        rec = ManifestRecord(
            index=index,
            split=split,
            scene=scene,
            mixture_path=paths["mixture"],
            clean_path=paths["clean"],
            env_path=paths["env"],
            env_caption=caption_for(scene, "env"),
            speaker_caption=caption_for(scene, "speaker"),
        )
        lines.append(rec.to_json())
    manifest = out_dir / "manifest.jsonl"
    try:
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write manifest {manifest}: {exc}") from exc
    log.info("wrote %d records to %s", len(lines) - 1, manifest)
    return manifest


def load_manifest(path) -> tuple[dict, list[ManifestRecord]]:
    """Read a manifest; other data sources can be adapted by emitting this same schema."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise CorpusError(f"{path}: not an envvc manifest")
    if header.get("version") != MANIFEST_VERSION:
        raise CorpusError(f"{path}: unsupported manifest version {header.get('version')}")
    return header, [ManifestRecord.from_json(line) for line in lines[1:] if line.strip()]


def load_record_audio(manifest_path, record: ManifestRecord, kind: str) -> AudioClip:
    root = Path(manifest_path).parent
    rel = {"mixture": record.mixture_path, "clean": record.clean_path, "env": record.env_path}[kind]
    return read_wav(root / rel)
