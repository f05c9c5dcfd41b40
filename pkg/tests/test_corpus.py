import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from envvc.audio import AudioClip, ImpulseResponse, convolve, mix
from envvc.corpus import (
    ENV_CLASSES,
    PITCH_LEVELS_HZ,
    SILENCE,
    SPEECH_RMS,
    VOCAB_SIZE,
    CorpusConfig,
    CorpusError,
    SceneSpec,
    all_speaker_captions,
    build_corpus,
    caption_vocabulary,
    check_tokens,
    compose_mixture,
    env_caption,
    load_manifest,
    random_content,
    render_env,
    render_speech,
    sample_scene,
    speaker_caption,
    speaker_profile,
)


def autocorr_pitch(x, fs, fmin=70.0, fmax=450.0):
    """Autocorrelation peak with parabolic interpolation."""
    x = x - x.mean()
    r = np.correlate(x, x, mode="full")[len(x) - 1 :]
    lo, hi = int(fs / fmax), int(fs / fmin)
    k = lo + int(np.argmax(r[lo:hi]))
    a, b, c = r[k - 1], r[k], r[k + 1]
    shift = 0.5 * (a - c) / (a - 2 * b + c)
    return fs / (k + shift)


@pytest.mark.parametrize("speaker", [0, 5, 10, 15])
def test_rendered_pitch_matches_profile(speaker):
    prof = speaker_profile(speaker)
    y = render_speech(prof, [3] * 10, seed=1).samples
    mid = y[4000:8000]
    f0 = autocorr_pitch(mid, 16000)
    # vibrato moves f0 by under 1%
    assert f0 == pytest.approx(prof.f0_hz, rel=0.02)


def test_tilt_filter_is_a_power_law(rng):
    from envvc.corpus import _tilt

    x = rng.standard_normal(4096)
    f = np.fft.rfftfreq(4096, 1 / 16000)
    keep = f >= 100
    ratio_db = 20 * np.log10(np.abs(np.fft.rfft(_tilt(x, -6.0, 16000))[keep]) / np.abs(np.fft.rfft(x)[keep]))
    slope, icpt = np.polyfit(np.log2(f[keep] / 500.0), ratio_db, 1)
    assert slope == pytest.approx(-6.0, abs=1e-9) and icpt == pytest.approx(0.0, abs=1e-9)


def octave_band_levels(x, fs, centres):
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1 / fs)
    return np.array([10 * np.log10(spec[(f >= c / np.sqrt(2)) & (f < c * np.sqrt(2))].sum()) for c in centres])


def test_brightness_levels_differ_by_their_tilt():
    # same pitch row, brightness 0 and 3; vibrato differs slightly, so the
    # octave-band comparison is only approximate
    dark, bright = speaker_profile(4), speaker_profile(7)
    a = render_speech(dark, [3] * 20, seed=2).samples
    b = render_speech(bright, [3] * 20, seed=2).samples
    centres = np.array([500.0, 1000.0, 2000.0, 4000.0])
    diff = octave_band_levels(b, 16000, centres) - octave_band_levels(a, 16000, centres)
    slope = np.polyfit(np.log2(centres), diff, 1)[0]
    assert slope == pytest.approx(bright.spectral_tilt_db_oct - dark.spectral_tilt_db_oct, abs=1.0)


def test_speech_level_and_silence():
    y = render_speech(speaker_profile(2), [0, 0, 5, 5, 20, 0], seed=0).samples
    block = 1280
    active = y[2 * block : 5 * block]
    assert np.sqrt(np.mean(active**2)) == pytest.approx(SPEECH_RMS, rel=0.05)
    assert np.all(y[:block] == 0)
    assert np.all(render_speech(speaker_profile(2), [0] * 4).samples == 0)


def test_profiles_grid_is_distinct():
    profiles = [speaker_profile(i) for i in range(32)]
    keys = {(p.f0_hz, p.spectral_tilt_db_oct, p.vibrato_hz) for p in profiles}
    assert len(keys) == 32
    assert {p.f0_hz for p in profiles[:16]} == set(PITCH_LEVELS_HZ)
    with pytest.raises(CorpusError):
        speaker_profile(-1)


def test_token_validation():
    with pytest.raises(CorpusError, match="unknown token id 32"):
        check_tokens([1, 32])
    with pytest.raises(CorpusError):
        check_tokens([-1])


@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
def test_random_content_alphabet_and_length(seed, n):
    c = random_content(np.random.default_rng(seed), n)
    assert c.shape == (n,) and c.min() >= 0 and c.max() < VOCAB_SIZE


def test_scene_is_fully_determined_by_rng():
    cfg = CorpusConfig()
    a = sample_scene(np.random.default_rng(5), cfg)
    b = sample_scene(np.random.default_rng(5), cfg)
    assert a == b
    assert len(a.content) == 125
    assert SceneSpec.from_dict(a.to_dict()) == a


def test_augmentation_frequencies_within_three_percent():
    cfg = CorpusConfig()
    rng = np.random.default_rng(0)
    scenes = [sample_scene(rng, cfg) for _ in range(1000)]
    assert np.mean([s.apply_rir for s in scenes]) == pytest.approx(0.5, abs=0.03)
    assert np.mean([s.has_env for s in scenes]) == pytest.approx(0.5, abs=0.03)
    assert np.mean([s.silent_speech for s in scenes]) == pytest.approx(0.2, abs=0.03)


def _scene(**kw):
    base = dict(speaker_id=3, content=tuple([0, 4, 4, 17, 25, 0, 9, 9, 9, 0]), env_class="rain",
                env_params={"density": 1500.0, "center_hz": 4000.0}, snr_db=12.0, apply_rir=True,
                rir_params=(0.3, 0.002, 9), silent_speech=False, seed=77)
    base.update(kw)
    return SceneSpec(**base)


def test_mixture_recomposition():
    scene = _scene()
    mixture, clean, env = compose_mixture(scene)
    rt60, delay, seed = scene.rir_params
    from envvc.audio import synth_rir

    wet = convolve(clean, synth_rir(rt60, delay, 16000, seed))
    ref = mix(wet, env, scene.snr_db)
    assert np.max(np.abs(mixture.samples - ref.samples)) < 1e-12


def test_identity_and_silent_cases():
    mixture, clean, _ = compose_mixture(_scene(env_class=None, env_params={}, apply_rir=False))
    assert np.array_equal(mixture.samples, clean.samples)
    silent = _scene(silent_speech=True, content=tuple([0] * 10), apply_rir=False)
    mixture, clean, env = compose_mixture(silent)
    assert np.all(clean.samples == 0)
    assert np.array_equal(mixture.samples, env.samples)


@pytest.mark.parametrize("label", ENV_CLASSES)
def test_env_generators(label):
    clip = render_env(label, {}, seed=1, duration_s=1.0)
    assert len(clip) == 16000 and np.all(np.isfinite(clip.samples))
    assert abs(clip.samples.mean()) < 1e-12


def test_unknown_env_rejected():
    with pytest.raises(CorpusError, match="unknown environment class 'lava'"):
        render_env("lava")


def test_speaker_captions_identify_their_bucket():
    owner = {}
    for p in range(4):
        for b in range(4):
            for cap in all_speaker_captions((p, b)):
                assert owner.setdefault(cap, (p, b)) == (p, b)
    assert len(owner) == 64
    vocab = set(caption_vocabulary())
    for cap in list(owner) + [env_caption(c, v) for c in ENV_CLASSES for v in range(2)]:
        assert set(cap.split()) <= vocab


def _tiny_config(seed=3):
    return CorpusConfig(n_speakers=2, clips_per_speaker=1, heldout_per_speaker=1, duration_s=1.0, seed=seed)


def test_build_corpus_is_deterministic(tmp_path):
    a = build_corpus(_tiny_config(), tmp_path / "a")
    b = build_corpus(_tiny_config(), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    header, records = load_manifest(a)
    assert header["version"] == 1 and len(records) == 4
    assert [r.split for r in records] == ["train", "train", "heldout", "heldout"]
    for r in records:
        for kind in ("mixture", "clean", "env"):
            rel = getattr(r, f"{kind}_path")
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_manifest_rejects_foreign_files(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"schema": "other"}\n')
    with pytest.raises(CorpusError):
        load_manifest(p)
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "missing.jsonl")
