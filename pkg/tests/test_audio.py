import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from envvc.audio import (
    AudioClip,
    AudioError,
    ImpulseResponse,
    convolve,
    env_gain,
    fit_length,
    mix,
    power,
    read_wav,
    segment_or_pad,
    synth_rir,
    write_wav,
)


def direct_convolution(x, h):
    """O(n*m) reference, truncated to len(x)."""
    y = np.zeros(len(x))
    for i in range(len(x)):
        for j in range(min(i + 1, len(h))):
            y[i] += h[j] * x[i - j]
    return y


def test_convolve_matches_direct_sum(rng):
    for _ in range(20):
        x = rng.standard_normal(rng.integers(1, 200))
        h = rng.standard_normal(rng.integers(1, 60))
        got = convolve(AudioClip(x), ImpulseResponse(h)).samples
        ref = direct_convolution(x, h)
        assert np.max(np.abs(got - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))


def test_delta_rir_is_identity(rng):
    x = rng.standard_normal(500)
    assert np.array_equal(convolve(AudioClip(x), ImpulseResponse(np.array([1.0]))).samples.round(12), x.round(12))


def test_convolve_rejects_rate_mismatch():
    with pytest.raises(AudioError, match="sample-rate"):
        convolve(AudioClip(np.ones(10), 16000), ImpulseResponse(np.ones(3), 8000))


@given(st.floats(-10, 40))
def test_mix_hits_requested_snr(snr):
    rng = np.random.default_rng(0)
    s = rng.standard_normal(4000)
    e = rng.standard_normal(1000)  # tiled to the speech length
    out = mix(AudioClip(s), AudioClip(e), snr).samples
    scaled_env = out - s
    assert 10 * np.log10(power(s) / power(scaled_env)) == pytest.approx(snr, abs=1e-9)


def test_env_gain_edge_cases():
    assert env_gain(np.zeros(10), np.ones(10), 5.0) == 1.0
    assert env_gain(np.ones(10), np.zeros(10), 5.0) == 0.0


def test_fit_length_tiles_and_truncates():
    assert np.array_equal(fit_length(np.array([1.0, 2.0]), 5), [1, 2, 1, 2, 1])
    assert np.array_equal(fit_length(np.arange(6.0), 3), [0, 1, 2])
    assert np.array_equal(fit_length(np.array([]), 3), [0, 0, 0])


def test_synth_rir_decays_60db_over_rt60():
    rt60 = 0.4
    ir = synth_rir(rt60, 0.005, 16000, seed=3).taps
    d = int(round(0.005 * 16000))
    assert ir[d] == 1.0 and np.all(ir[:d] == 0)
    tail = ir[d + 1 :] ** 2
    # energy envelope in two windows rt60/2 apart should drop by ~30 dB
    w = 800
    i0, i1 = 400, 400 + int(rt60 / 2 * 16000)
    drop = 10 * np.log10(tail[i0 : i0 + w].mean() / tail[i1 : i1 + w].mean())
    assert drop == pytest.approx(30.0, abs=3.0)


def test_synth_rir_rejects_bad_parameters():
    with pytest.raises(AudioError):
        synth_rir(0.0)
    with pytest.raises(AudioError):
        synth_rir(0.3, -0.1)


def test_wav_round_trip(tmp_path, rng):
    x = np.clip(rng.standard_normal(1000) * 0.2, -1, 1)
    path = write_wav(AudioClip(x), tmp_path / "a.wav")
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - x)) <= 0.5 / 32767 + 1e-12


def test_wav_reader_rejects_garbage(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFF0000WAVEjunk")
    with pytest.raises(AudioError):
        read_wav(p)


def test_clip_validation():
    with pytest.raises(AudioError):
        AudioClip(np.ones((2, 3)))
    with pytest.raises(AudioError):
        AudioClip(np.array([np.nan]))
    with pytest.raises(AudioError):
        AudioClip(np.ones(3), 0)


def test_segment_or_pad():
    c = AudioClip(np.ones(10), 10)
    assert len(segment_or_pad(c, 0.5)) == 5
    padded = segment_or_pad(c, 2.0).samples
    assert len(padded) == 20 and padded[10:].sum() == 0
