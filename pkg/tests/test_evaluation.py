from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from envvc.evaluation import (
    EvalReport,
    EnvProbe,
    ContentProbe,
    ProbeError,
    _check_labels,
    clip_statistics,
    emit_plots,
    nearest_speaker,
    pca_project,
    silhouette,
)


def test_pca_matches_dense_eigensolver(rng):
    x = rng.standard_normal((80, 6)) @ rng.standard_normal((6, 6))
    proj, comps, var = pca_project(x, 3)
    evals, evecs = np.linalg.eigh(np.cov(x, rowvar=False))
    evals, evecs = evals[::-1], evecs[:, ::-1]
    np.testing.assert_allclose(var, evals[:3], rtol=1e-9)
    for k in range(3):
        assert abs(abs(comps[k] @ evecs[:, k]) - 1) < 1e-9
    np.testing.assert_allclose(comps @ comps.T, np.eye(3), atol=1e-9)
    assert np.all(np.diff(var) <= 0)
    np.testing.assert_allclose(proj, (x - x.mean(0)) @ comps.T)


def test_pca_rank_one_line(rng):
    direction = np.array([3.0, -1.0, 2.0]) / np.sqrt(14)
    x = rng.standard_normal(50)[:, None] * direction + np.array([5.0, 5.0, 5.0])
    _, comps, var = pca_project(x, 2)
    assert abs(abs(comps[0] @ direction) - 1) < 1e-9
    assert var[1] < 1e-20


def test_pca_idempotent_on_subspace(rng):
    x = rng.standard_normal((40, 5))
    proj, _, _ = pca_project(x, 3)
    again, _, _ = pca_project(proj, 3)
    d1 = np.linalg.norm(proj[:, None] - proj[None], axis=-1)
    d2 = np.linalg.norm(again[:, None] - again[None], axis=-1)
    np.testing.assert_allclose(d1, d2, atol=1e-9)


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_project(np.zeros((5, 3)), 4)
    with pytest.raises(ValueError):
        pca_project(np.zeros((2, 3)), 2)


def test_silhouette_hand_computed():
    x = np.array([[0.0], [1.0], [4.0], [6.0]])
    labels = ["a", "a", "b", "b"]
    # per point (b - a) / max(a, b) with the means written out by hand
    s = [Fraction(5 - 1, 5), Fraction(4 - 1, 4), Fraction(Fraction(7, 2) - 2, Fraction(7, 2)),
         Fraction(Fraction(11, 2) - 2, Fraction(11, 2))]
    assert silhouette(x, labels) == pytest.approx(float(sum(s) / 4), abs=1e-15)


def test_silhouette_limits(rng):
    a = rng.uniform(0, 0.5, (20, 3))
    b = rng.uniform(0, 0.5, (20, 3)) + 1000
    assert silhouette(np.vstack([a, b]), [0] * 20 + [1] * 20) > 0.99
    cloud = rng.standard_normal((200, 4))
    assert abs(silhouette(cloud, rng.integers(0, 4, 200))) < 0.1
    assert silhouette(np.array([[0.0], [1.0], [5.0]]), [0, 0, 1]) == pytest.approx((0.8 + 0.75 + 0) / 3)
    with pytest.raises(ValueError):
        silhouette(cloud, np.zeros(200))


@given(arrays(np.float64, (12, 3), elements=st.floats(-100, 100)), st.lists(st.integers(0, 3), min_size=12, max_size=12))
def test_silhouette_is_bounded(x, labels):
    if len(set(labels)) < 2:
        return
    assert -1 - 1e-12 <= silhouette(x, labels) <= 1 + 1e-12


def test_nearest_speaker_uses_cosine_and_low_id_ties():
    table = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert nearest_speaker([[5.0, 0.1]], table, [7, 3, 9]).tolist() == [3]
    assert nearest_speaker([[0.1, 2.0]], table, [7, 3, 9]).tolist() == [9]


def test_probes_shapes():
    frames = np.full((2, 250, 32), -5.0, dtype=np.float32)
    assert ContentProbe().eval().predict_tokens(frames, 125).shape == (2, 125)
    assert ContentProbe().eval().predict_tokens(frames[0, :249], 125).shape == (125,)
    assert EnvProbe().eval().predict(frames).shape == (2,)
    assert clip_statistics(frames).shape == (2, 160)
    with pytest.raises(ProbeError):
        _check_labels(np.zeros(10))


def test_emit_plots_are_deterministic(tmp_path, rng):
    raw = rng.standard_normal((30, 8))
    adapted = rng.standard_normal((30, 8))
    labels = np.repeat(np.arange(3), 10)
    a = emit_plots(raw, adapted, labels, tmp_path / "a")
    b = emit_plots(raw, adapted, labels, tmp_path / "b")
    assert [p.name for p in a] == ["pca_raw.png", "pca_adapted.png"]
    for p, q in zip(a, b):
        assert p.read_bytes() == q.read_bytes()
    with pytest.raises(ValueError):
        emit_plots(np.zeros((0, 8)), np.zeros((0, 8)), [], tmp_path)


def test_report_round_trip(tmp_path):
    r = EvalReport({"timbre_match": 0.5, "content_preservation": 0.9, "env_match": 0.8, "extra": 1.0}, "abc", "def")
    lines = r.table().splitlines()
    assert [line.split()[0] for line in lines] == ["content_preservation", "env_match", "timbre_match", "extra"]
    back = EvalReport.from_json(r.save(tmp_path / "r.json").read_text())
    assert back == r
