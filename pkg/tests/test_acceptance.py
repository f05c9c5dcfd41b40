"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-7 are self-contained oracles. Criteria 8-11 share one run of all
eight CLI subcommands on the default config. Set ``ENVVC_ACCEPTANCE_WORKDIR``
to keep that run's artifacts between sessions; steps whose outputs already
exist there are skipped and their recorded timings reused.
"""

import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from envvc.audio import AudioClip, ImpulseResponse, convolve, synth_rir
from envvc.backbone.adapter import ContentAdapter
from envvc.backbone.loss import diffusion_loss
from envvc.backbone.schedule import add_noise, make_schedule
from envvc.corpus import (
    CorpusConfig,
    compose_mixture,
    render_clean,
    render_scene_env,
    sample_scene,
    speaker_caption,
    speaker_profile,
)
from envvc.encoders.clap import ToyCLAP, info_nce
from envvc.rbtc import TimbreAdapter, TimbreKnowledgeBase, retrieve, triplet_loss
from envvc.sampler import (
    Conditions,
    GuidanceConfig,
    SamplerConfig,
    backbone_conditions,
    guided_noise,
    predict_x0,
    sample,
)
from helpers import finite_difference_check, small_backbone

# ---------------------------------------------------------------- oracles


def direct_convolution_loops(x, h):
    y = np.zeros(len(x))
    for i in range(len(x)):
        acc = 0.0
        for j in range(min(i + 1, len(h))):
            acc += h[j] * x[i - j]
        y[i] = acc
    return y


def recompose(scene, sample_rate=16000):
    """Mixture rebuilt from its parts with numpy convolution and a hand SNR gain."""
    clean = render_clean(scene, sample_rate).samples
    env = render_scene_env(scene, sample_rate).samples
    if scene.apply_rir:
        rt60, delay, seed = scene.rir_params
        clean = np.convolve(clean, synth_rir(rt60, delay, sample_rate, seed).taps)[: len(clean)]
    if not scene.has_env:
        return clean
    env = np.resize(env, len(clean))
    p_s, p_e = np.mean(clean**2), np.mean(env**2)
    if p_e == 0:
        return clean
    if p_s == 0:
        # nothing to set a level against: the env track passes through at unit gain
        return clean + env
    return clean + np.sqrt(p_s / (p_e * 10 ** (scene.snr_db / 10))) * env


def test_criterion_01_mixture_identities(criterion):
    with criterion(1, "mixture-model identities") as note:
        t0 = time.time()
        rng = np.random.default_rng(101)
        cfg = CorpusConfig(duration_s=2.0)
        worst_identity = 0.0
        for _ in range(20):
            s = sample_scene(rng, cfg)
            dry = dataclasses.replace(s, apply_rir=False, env_class=None, env_params={})
            mixture, clean, _ = compose_mixture(dry)
            worst_identity = max(worst_identity, float(np.max(np.abs(mixture.samples - clean.samples))))
            # a delta RIR is the identity too
            delta = convolve(clean, ImpulseResponse(np.array([1.0])))
            worst_identity = max(worst_identity, float(np.max(np.abs(delta.samples - clean.samples))))
        assert worst_identity < 1e-12, worst_identity
        silent_checked = 0
        while silent_checked < 20:
            s = sample_scene(rng, cfg)
            if not (s.silent_speech and s.has_env):
                continue
            mixture, _, env = compose_mixture(s)
            assert np.array_equal(mixture.samples, env.samples)
            silent_checked += 1
        worst = 0.0
        for _ in range(100):
            s = sample_scene(rng, cfg)
            mixture, _, _ = compose_mixture(s)
            ref = recompose(s)
            worst = max(worst, float(np.max(np.abs(mixture.samples - ref)) / max(1.0, np.max(np.abs(ref)))))
        assert worst < 1e-9, worst
        elapsed = time.time() - t0
        note(f"identity {worst_identity:.1e}, recomposition {worst:.1e} over 100 scenes")
        assert elapsed < 10, f"{elapsed:.1f}s"


def test_criterion_02_convolution_oracle(criterion):
    with criterion(2, "convolution oracle") as note:
        t0 = time.time()
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(rng.integers(1, 400))
            h = rng.standard_normal(rng.integers(1, 120))
            got = convolve(AudioClip(x), ImpulseResponse(h)).samples
            ref = direct_convolution_loops(x, h)
            worst = max(worst, float(np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300)))
        note(f"max rel err {worst:.1e} on 100 pairs")
        assert worst < 1e-6
        assert time.time() - t0 < 5


class SymbolicDenoiser:
    def __init__(self, shape, seed=0):
        g = torch.Generator().manual_seed(seed)
        self.table = {k: torch.randn(shape, generator=g, dtype=torch.float64) for k in ("cc", "cn", "nc", "nn")}

    def __call__(self, z_t, t, c_env, c_speech):
        return self.table[("c" if c_env == "env" else "n") + ("c" if c_speech == "speech" else "n")]


def test_criterion_03_guidance_algebra(criterion):
    with criterion(3, "guidance algebra") as note:
        t0 = time.time()
        rng = np.random.default_rng(303)
        den = SymbolicDenoiser((1, 5, 3))
        cond = Conditions(c_env="env", c_speech="speech", null_env="null_env", null_speech="null_speech")
        tab = {k: v.numpy() for k, v in den.table.items()}
        worst = 0.0
        for _ in range(50):
            we, ws = rng.uniform(0, 10, size=2)
            got = guided_noise(den, None, 0, cond, GuidanceConfig(we, ws)).numpy()
            want = tab["cc"] + we * (tab["cn"] - tab["nn"]) + ws * (tab["nc"] - tab["nn"])
            worst = max(worst, float(np.max(np.abs(got - want))))
        assert worst < 1e-12, worst
        model = small_backbone()
        c = backbone_conditions(model, rng.standard_normal(64), rng.integers(0, 32, 10), rng.standard_normal(32))
        z = torch.as_tensor(rng.standard_normal((1, 20, 32)))
        collapse = 0.0
        with torch.no_grad():
            for t in (0, 250, 999):
                tt = torch.tensor([t])
                full = model.predict_noise(z, tt, c.c_env, c.c_speech)
                collapse = max(collapse, float((guided_noise(model.predict_noise, z, tt, c, GuidanceConfig(0, 0)) - full).abs().max()))
                null = Conditions(c.null_env, c.null_speech, c.null_env, c.null_speech)
                base = model.predict_noise(z, tt, c.null_env, c.null_speech)
                got = guided_noise(model.predict_noise, z, tt, null, GuidanceConfig(3.0, 5.0))
                collapse = max(collapse, float((got - base).abs().max()))
        note(f"stub max diff {worst:.1e}; collapse max diff {collapse:.1e}")
        assert collapse < 1e-9
        assert time.time() - t0 < 30


def test_criterion_04_ddim(criterion):
    with criterion(4, "DDIM correctness") as note:
        t0 = time.time()
        rng = np.random.default_rng(404)
        s = make_schedule()
        z0 = torch.as_tensor(rng.standard_normal((2, 12, 4)))
        eps = torch.as_tensor(rng.standard_normal((2, 12, 4)))
        inv = max(float((predict_x0(add_noise(z0, t, eps, s), t, eps, s) - z0).abs().max()) for t in range(s.T))
        assert inv < 1e-9, inv
        model = small_backbone(torch.float32)
        cond = backbone_conditions(model, rng.standard_normal(64), rng.integers(0, 32, 8), rng.standard_normal(32))
        steps, calls = [], [0]

        def counted(*a):
            calls[0] += 1
            return model.predict_noise(*a)

        cfg = SamplerConfig(steps=50, eta=0.0, seed=11)
        a = sample(counted, cond, (1, 16, 32), s, GuidanceConfig(), cfg, callback=lambda i, t: steps.append(t))
        b = sample(model.predict_noise, cond, (1, 16, 32), s, GuidanceConfig(), cfg)
        assert torch.equal(a, b)
        assert len(steps) == 50 and calls[0] == 4 * 50
        note(f"inversion {inv:.1e}; 50 steps, {calls[0]} denoiser calls, bit-identical rerun")
        assert time.time() - t0 < 60


def test_criterion_05_gradient_checks(criterion):
    with criterion(5, "gradient checks (float64)") as note:
        t0 = time.time()
        rng = np.random.default_rng(505)
        errs = {}

        model = small_backbone()
        tokens = torch.as_tensor(rng.integers(0, 32, (2, 8)))
        z0 = torch.as_tensor(rng.standard_normal((2, 16, 32)))
        c_env = torch.as_tensor(rng.standard_normal((2, 64)))
        e_spk = torch.as_tensor(rng.standard_normal((2, 32)))
        eps = torch.as_tensor(rng.standard_normal((2, 16, 32)))
        sched = make_schedule()

        def diff_loss():
            return diffusion_loss(model, z0, c_env, tokens, e_spk, sched, t=[50, 800], eps=eps,
                                  drop_env=[False, True], drop_speech=[False, False])

        errs["diffusion"] = finite_difference_check(model, diff_loss, n=100)

        adapter = TimbreAdapter(dim=16, hidden=32, heads=2).double()
        x = [torch.as_tensor(rng.standard_normal((6, 3, 16))) for _ in range(3)]
        errs["triplet"] = finite_difference_check(
            adapter, lambda: triplet_loss(adapter(x[0]), adapter(x[1]), adapter(x[2]), alpha=3.0), n=100
        )

        content = ContentAdapter(dim=16, layers=2, heads=2).double()
        ctok = torch.as_tensor(rng.integers(0, 32, (2, 9)))
        w = torch.as_tensor(rng.standard_normal((2, 9, 16)))
        errs["content adapter"] = finite_difference_check(content, lambda: (content(ctok) * w).sum(), n=100)

        clap = ToyCLAP().double()
        frames = torch.as_tensor(rng.normal(-4, 2, size=(4, 40, 32)))
        captions = ["the sound of rain falling", "a deep dark voice", "the sound of static hiss", "a shrill bright voice"]
        errs["InfoNCE"] = finite_difference_check(
            clap, lambda: info_nce(clap.audio_embedding(frames), clap.text_embedding(captions), clap.temperature), n=100
        )
        note(", ".join(f"{k} {rel:.1e} (n={n})" for k, (rel, n) in errs.items()))
        for k, (rel, n) in errs.items():
            assert n >= 100 and rel < 1e-4, k
        assert time.time() - t0 < 300


def test_criterion_06_augmentation_frequencies(criterion):
    with criterion(6, "augmentation frequencies") as note:
        t0 = time.time()
        rng = np.random.default_rng(606)
        cfg = CorpusConfig()
        scenes = [sample_scene(rng, cfg) for _ in range(10_000)]
        rates = {
            "rir": np.mean([s.apply_rir for s in scenes]),
            "env": np.mean([s.has_env for s in scenes]),
            "silent": np.mean([s.silent_speech for s in scenes]),
        }
        note(", ".join(f"P({k})={v:.4f}" for k, v in rates.items()))
        assert abs(rates["rir"] - 0.5) <= 0.02
        assert abs(rates["env"] - 0.5) <= 0.02
        assert abs(rates["silent"] - 0.2) <= 0.02
        assert time.time() - t0 < 10


def _scan(q, ids, cents):
    best, best_id = -np.inf, None
    for sid, c in zip(ids, cents):
        cos = float(np.dot(q, c) / (np.linalg.norm(q) * np.linalg.norm(c)))
        if cos > best or (cos == best and sid < best_id):
            best, best_id = cos, sid
    return best_id


def test_criterion_07_retrieval(criterion):
    with criterion(7, "retrieval oracle") as note:
        t0 = time.time()
        rng = np.random.default_rng(707)
        ids = rng.permutation(64)[:16]
        tkb = TimbreKnowledgeBase(ids, rng.standard_normal((16, 64)), rng.standard_normal((16, 32)))
        agree = sum(retrieve(q, tkb)[0] == _scan(q, tkb.speaker_ids, tkb.centroids) for q in rng.standard_normal((1000, 64)))
        assert agree == 1000
        for i, c in enumerate(tkb.centroids):
            assert retrieve(c, tkb)[0] == tkb.speaker_ids[i]
        for q in rng.standard_normal((100, 64)):
            k = rng.uniform(1e-3, 1e3)
            assert retrieve(q * k, tkb)[0] == retrieve(q, tkb)[0]
        note("1000/1000 agree with the scan; self-query and scale invariance hold")
        assert time.time() - t0 < 10


# ------------------------------------------------------- desk pipeline run


def _run_cli(argv):
    from envvc.cli import main

    t0 = time.time()
    code = main(argv)
    assert code == 0, f"envvc {' '.join(map(str, argv))} exited {code}"
    return time.time() - t0


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """All eight subcommands on the default config; returns (work_dir, timings)."""
    env_dir = os.environ.get("ENVVC_ACCEPTANCE_WORKDIR")
    work = Path(env_dir) if env_dir else tmp_path_factory.mktemp("desk")
    work.mkdir(parents=True, exist_ok=True)
    timing_path = work / "timings.json"
    timings = json.loads(timing_path.read_text()) if env_dir and timing_path.exists() else {}
    common = ["--work-dir", str(work)]
    stages = [
        ("gen-corpus", [], work / "corpus" / "manifest.jsonl"),
        ("train-clap", [], work / "speaker.ckpt"),
        ("train-backbone", [], work / "backbone.ckpt"),
        ("train-adapter", [], work / "adapter.ckpt"),
        ("build-tkb", [], work / "tkb.bin"),
        ("convert", None, work / "convert.wav"),
        ("eval", [], work / "eval" / "report.json"),
        ("viz", [], work / "viz" / "stats.json"),
    ]
    for name, extra, output in stages:
        if env_dir and output.exists() and name in timings:
            continue
        if extra is None:
            src = _convert_source(work)
            extra = ["--src", str(src), "--env-text", "the sound of rain falling",
                     "--spk-text", "a deep dark voice", "--out", str(output)]
        timings[name] = _run_cli([name, *common, *extra])
        timing_path.write_text(json.dumps(timings, indent=2))
    return work, timings


def _convert_source(work):
    from envvc.corpus import load_manifest

    manifest = work / "corpus" / "manifest.jsonl"
    _, records = load_manifest(manifest)
    rec = next(r for r in records if r.split == "heldout" and not r.scene.silent_speech)
    return manifest.parent / rec.mixture_path


TRAINING_STAGES = ("gen-corpus", "train-clap", "train-backbone", "train-adapter", "build-tkb")


@pytest.mark.slow
def test_criterion_08_adapter_separability(desk_run, criterion):
    work, timings = desk_run
    with criterion(8, "adapter separability") as note:
        stats = json.loads((work / "viz" / "stats.json").read_text())
        gain = stats["silhouette_adapted"] - stats["silhouette_raw"]
        layout = stats["layout"]
        note(f"silhouette raw {stats['silhouette_raw']:.3f} -> adapted {stats['silhouette_adapted']:.3f} "
             f"(+{gain:.3f}); adapter+viz {timings['train-adapter'] + timings['viz']:.0f}s")
        assert gain >= 0.1
        assert len(layout["speakers"]) == 10 and set(layout["points_per_speaker"]) == {50}
        for name in ("pca_raw.png", "pca_adapted.png"):
            assert (work / "viz" / name).stat().st_size > 0
        assert timings["train-adapter"] + timings["viz"] < 15 * 60


@pytest.mark.slow
def test_criterion_09_text_to_timbre(desk_run, criterion):
    from envvc.config import RunConfig
    from envvc.pipeline import Run
    from envvc.rbtc import text_to_timbre

    work, _ = desk_run
    with criterion(9, "text-to-timbre retrieval") as note:
        t0 = time.time()
        cfg = RunConfig()
        cfg.paths.work_dir = str(work)
        run = Run(cfg)
        clap, adapter, tkb = run.clap(), run.adapter(), run.tkb()
        buckets = {}
        for sid in tkb.speaker_ids:
            buckets.setdefault(speaker_profile(int(sid)).descriptor_bucket, set()).add(int(sid))
        hits = total = 0
        for bucket, members in buckets.items():
            for variant in range(4):
                sid, _ = text_to_timbre(speaker_caption(bucket, variant), clap, adapter, tkb)
                hits += sid in members
                total += 1
        acc = hits / total
        note(f"{hits}/{total} captions retrieve a speaker of their bucket ({acc:.3f}; {len(buckets)} buckets)")
        assert len(buckets) >= 4
        assert acc >= 0.9
        assert time.time() - t0 < 300


@pytest.mark.slow
def test_criterion_10_end_to_end(desk_run, criterion):
    work, timings = desk_run
    with criterion(10, "end-to-end desk pipeline") as note:
        report = json.loads((work / "eval" / "report.json").read_text())
        m = report["metrics"]
        train_s = sum(timings[k] for k in TRAINING_STAGES)
        note(f"content {m['content_preservation']:.3f}, env {m['env_match']:.3f}, timbre {m['timbre_match']:.3f} "
             f"on {len(report['details']['requests'])} conversions; training {train_s / 60:.1f} min")
        assert len(report["details"]["requests"]) == 50
        assert (work / "convert.wav").stat().st_size > 0
        assert train_s <= 60 * 60
        assert m["content_preservation"] >= 0.70
        assert m["env_match"] >= 0.70
        assert m["timbre_match"] >= 0.60


@pytest.mark.slow
def test_criterion_11_probe_controls(desk_run, criterion):
    from envvc.config import RunConfig
    from envvc.data import load_features
    from envvc.evaluation import content_accuracy, env_accuracy, train_content_probe, train_env_probe

    work, _ = desk_run
    with criterion(11, "probe validity controls") as note:
        t0 = time.time()
        m = json.loads((work / "eval" / "report.json").read_text())["metrics"]
        cfg = RunConfig()
        f = load_features(work / "corpus" / "manifest.jsonl")
        ho = f.heldout & ~f.silent
        steps = cfg.train.probes
        seed = cfg.seed_for("probes-shuffled")
        shuffled_c = train_content_probe(f, steps.content_steps, seed=seed, shuffle_labels=True)
        shuffled_e = train_env_probe(f, steps.env_steps, seed=seed, shuffle_labels=True)
        sc = content_accuracy(shuffled_c, f.clean[ho], f.content[ho])
        se = env_accuracy(shuffled_e, f.mixture[f.heldout], f.env_label[f.heldout])
        chance_c = np.bincount(f.content[ho].ravel()).max() / f.content[ho].size + 0.05
        chance_e = np.bincount(f.env_label[f.heldout]).max() / f.heldout.sum() + 0.05
        note(f"content {m['probe_content_heldout']:.3f} (shuffled {sc:.3f} <= {chance_c:.3f}), "
             f"env {m['probe_env_heldout']:.3f} (shuffled {se:.3f} <= {chance_e:.3f})")
        assert m["probe_content_heldout"] >= 0.90
        assert m["probe_env_heldout"] >= 0.95
        assert sc <= chance_c and se <= chance_e
        assert time.time() - t0 < 600
