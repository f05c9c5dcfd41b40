"""Artifact layout and the end-to-end training / conversion / evaluation phases.

Every artifact lives at a fixed path under the run's work directory, and
each phase names the artifacts it reads. A missing input raises
``MissingArtifact`` naming the file and the subcommand that produces it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from envvc import checkpoint
from envvc.audio import AudioClip, read_wav, write_wav
from envvc.backbone.schedule import make_schedule
from envvc.backbone.train import BackboneTrainConfig, TrainingData, train_backbone
from envvc.backbone.unet import Backbone
from envvc.config import RunConfig
from envvc.corpus import (
    ENV_CLASSES,
    build_corpus,
    env_caption,
    load_record_audio,
    speaker_caption,
    speaker_profile,
)
from envvc.data import ENV_LABELS, CorpusFeatures, load_features, record_by_path
from envvc.encoders.clap import ToyCLAP, Vocabulary, clap_embed_audio, clap_embed_text, train_clap
from envvc.encoders.codec import latent_decode, latent_encode, n_frames
from envvc.encoders.content import tokenize_content
from envvc.encoders.speaker import SpeakerNet, speaker_embed, train_speaker_encoder
from envvc.evaluation import (
    ContentProbe,
    EnvProbe,
    EvalReport,
    content_accuracy,
    emit_plots,
    env_accuracy,
    score_conversions,
    silhouette,
    train_content_probe,
    train_env_probe,
)
from envvc.rbtc import TimbreAdapter, TimbreKnowledgeBase, adapt_each, build_tkb, text_to_timbre, train_adapter
from envvc.sampler import GuidanceConfig, SamplerConfig, sample_latent

log = logging.getLogger(__name__)

# name -> (path relative to the work dir, producing subcommand)
ARTIFACTS = {
    "manifest": ("corpus/manifest.jsonl", "gen-corpus"),
    "clap": ("clap.ckpt", "train-clap"),
    "speaker": ("speaker.ckpt", "train-clap"),
    "backbone": ("backbone.ckpt", "train-backbone"),
    "adapter": ("adapter.ckpt", "train-adapter"),
    "tkb": ("tkb.bin", "build-tkb"),
    "probes": ("probes.ckpt", "eval"),
}


class MissingArtifact(FileNotFoundError):
    def __init__(self, name: str, path: Path, producer: str):
        self.name = name
        self.path = path
        self.producer = producer
        super().__init__(f"missing {name} artifact {path}; run `envvc {producer}` first")


@dataclass
class Conversion:
    audio: AudioClip
    latent: np.ndarray
    tokens: np.ndarray
    speaker_id: int


class Run:
    """All phases of one configured run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._features = None
        self._cache = {}

    # ------------------------------------------------------------ artifacts

    def path(self, name: str) -> Path:
        if name == "manifest":
            return self.cfg.corpus_dir / "manifest.jsonl"
        return self.cfg.work_dir / ARTIFACTS[name][0]

    def require(self, *names: str) -> None:
        for name in names:
            p = self.path(name)
            if not p.exists():
                raise MissingArtifact(name, p, ARTIFACTS[name][1])

    def header(self, kind: str) -> dict:
        return {"kind": kind, "config_hash": self.cfg.hash(), "seed": self.cfg.seed}

    def features(self) -> CorpusFeatures:
        if self._features is None:
            self.require("manifest")
            self._features = load_features(self.path("manifest"))
        return self._features

    # --------------------------------------------------------------- corpus

    def gen_corpus(self, out_dir=None) -> Path:
        out = Path(out_dir) if out_dir else self.cfg.corpus_dir
        return build_corpus(self.cfg.corpus_config(), out)

    # ------------------------------------------------------------- encoders

    def train_encoders(self) -> tuple[Path, Path]:
        """CLAP stand-in and speaker encoder, plus the per-speaker timbre table."""
        f = self.features()
        tc, ts = self.cfg.train.clap, self.cfg.train.speaker
        clap = train_clap(f, tc.steps, tc.batch_classes, tc.lr, self.cfg.seed_for("clap"))
        clap_path = checkpoint.save_module(
            self.path("clap"), clap, {**self.header("clap"), "vocab": clap.vocab.words}
        )
        net = train_speaker_encoder(f, ts.steps, ts.batch, ts.crop, ts.lr, self.cfg.seed_for("speaker"))
        ids, table = timbre_table(f, net)
        spk_path = checkpoint.save_module(
            self.path("speaker"),
            net,
            {**self.header("speaker"), "speaker_ids": net.speaker_ids},
            {"timbre_ids": ids, "timbre": table},
        )
        self._cache.clear()
        return clap_path, spk_path

    def clap(self) -> ToyCLAP:
        if "clap" not in self._cache:
            self.require("clap")
            header, _ = checkpoint.load(self.path("clap"))
            model = ToyCLAP(Vocabulary(header["vocab"]))
            checkpoint.load_module(self.path("clap"), model)
            model.eval()
            self._cache["clap"] = model
        return self._cache["clap"]

    def speaker(self) -> tuple[SpeakerNet, np.ndarray, np.ndarray]:
        """Speaker net, timbre-table speaker ids, timbre table."""
        if "speaker" not in self._cache:
            self.require("speaker")
            header, _ = checkpoint.load(self.path("speaker"))
            net = SpeakerNet(len(header["speaker_ids"]))
            _, extra = checkpoint.load_module(self.path("speaker"), net)
            net.speaker_ids = header["speaker_ids"]
            net.eval()
            self._cache["speaker"] = (net, extra["timbre_ids"], extra["timbre"].astype(np.float64))
        return self._cache["speaker"]

    # ------------------------------------------------------------- backbone

    def training_data(self) -> TrainingData:
        f = self.features()
        clap = self.clap()
        _, ids, table = self.speaker()
        tr = f.train
        source = f.env if self.cfg.train.backbone.env_embedding_source == "env_track" else f.mixture
        c_env = clap_embed_audio(clap, source[tr]).astype(np.float32)
        row = {int(s): i for i, s in enumerate(ids)}
        e_spk = table[[row[int(s)] for s in f.speaker[tr]]].astype(np.float32)
        return TrainingData(f.mixture[tr], c_env, f.content[tr], e_spk)

    def new_backbone(self) -> Backbone:
        m = self.cfg.model
        return Backbone(d_cond=m.d_cond, widths=tuple(m.widths), heads=m.heads, adapter_layers=m.adapter_layers)

    def train_backbone(self) -> Path:
        self.require("manifest", "clap", "speaker")
        data = self.training_data()
        b = self.cfg.train.backbone
        cfg = BackboneTrainConfig(
            steps=b.steps, batch=b.batch, crop_frames=b.crop_frames, lr=b.lr, lr_schedule=b.lr_schedule, weight_decay=b.weight_decay,
            p_drop=b.p_drop, env_noise=b.env_noise, schedule=self.cfg.model.schedule, T=self.cfg.model.T,
        )
        self.cfg.work_dir.mkdir(parents=True, exist_ok=True)
        model = train_backbone(
            data, cfg, seed=self.cfg.seed_for("backbone"), metrics_path=self.cfg.work_dir / "backbone_metrics.txt",
            model=self.new_backbone(),
        )
        self._cache.pop("backbone", None)
        return checkpoint.save_module(self.path("backbone"), model, self.header("backbone"))

    def backbone(self) -> Backbone:
        if "backbone" not in self._cache:
            self.require("backbone")
            model = self.new_backbone()
            checkpoint.load_module(self.path("backbone"), model)
            model.eval()
            self._cache["backbone"] = model
        return self._cache["backbone"]

    # ----------------------------------------------------------------- rbtc

    def adapter_data(self, mask) -> tuple[np.ndarray, np.ndarray]:
        """CLAP audio embeddings of clean and mixed speech for the clips in ``mask``."""
        f = self.features()
        clap = self.clap()
        keep = mask & ~f.silent
        emb = np.concatenate([clap_embed_audio(clap, f.clean[keep]), clap_embed_audio(clap, f.mixture[keep])])
        return emb, np.concatenate([f.speaker[keep], f.speaker[keep]])

    def train_adapter(self) -> Path:
        self.require("manifest", "clap")
        a = self.cfg.train.adapter
        emb, spk = self.adapter_data(self.features().train)
        adapter, curve = train_adapter(
            emb, spk, a.steps, a.batch, a.lr, a.alpha, a.loss_orientation, a.set_size, self.cfg.seed_for("adapter")
        )
        self._cache.pop("adapter", None)
        return checkpoint.save_module(
            self.path("adapter"),
            adapter,
            {**self.header("adapter"), "orientation": a.loss_orientation, "alpha": a.alpha},
            {"loss_curve": np.asarray(curve)},
        )

    def adapter(self) -> TimbreAdapter:
        if "adapter" not in self._cache:
            self.require("adapter")
            adapter = TimbreAdapter()
            checkpoint.load_module(self.path("adapter"), adapter)
            adapter.eval()
            self._cache["adapter"] = adapter
        return self._cache["adapter"]

    def build_tkb(self) -> Path:
        self.require("manifest", "clap", "speaker", "adapter")
        emb, spk = self.adapter_data(self.features().train)
        _, ids, table = self.speaker()
        tkb = build_tkb(adapt_each(self.adapter(), emb), spk, {int(s): t for s, t in zip(ids, table)})
        self._cache.pop("tkb", None)
        return tkb.save(self.path("tkb"))

    def tkb(self) -> TimbreKnowledgeBase:
        if "tkb" not in self._cache:
            self.require("tkb")
            self._cache["tkb"] = TimbreKnowledgeBase.load(self.path("tkb"))
        return self._cache["tkb"]

    # --------------------------------------------------------------- probes

    def train_probes(self) -> Path:
        f = self.features()
        p = self.cfg.train.probes
        seed = self.cfg.seed_for("probes")
        probes = torch.nn.ModuleDict(
            {"content": train_content_probe(f, p.content_steps, seed=seed), "env": train_env_probe(f, p.env_steps, seed=seed)}
        )
        self._cache.pop("probes", None)
        return checkpoint.save_module(self.path("probes"), probes, self.header("probes"))

    def probes(self) -> tuple[ContentProbe, EnvProbe]:
        """Trained probes, training and caching them on first use."""
        if "probes" not in self._cache:
            if not self.path("probes").exists():
                self.train_probes()
            probes = torch.nn.ModuleDict({"content": ContentProbe(), "env": EnvProbe()})
            checkpoint.load_module(self.path("probes"), probes)
            probes.eval()
            self._cache["probes"] = (probes["content"], probes["env"])
        return self._cache["probes"]

    # ----------------------------------------------------------- conversion

    def source_tokens(self, clip: AudioClip, src_path=None) -> np.ndarray:
        """Oracle tokens when the source is a corpus file, otherwise the content probe's reading."""
        if src_path is not None and self.path("manifest").exists():
            rec = record_by_path(self.features().records, self.path("manifest"), src_path)
            if rec is not None:
                return tokenize_content(rec.scene, "oracle")
        content_probe, _ = self.probes()
        return tokenize_content(clip, "probe", probe=content_probe)

    def convert(
        self, source, env_text: str, spk_text: str, guidance=None, sampler=None, tokens=None,
    ) -> Conversion:
        """Text-driven conversion of ``source`` (a wav path or AudioClip)."""
        self.require("backbone", "clap", "adapter", "tkb")
        guidance = guidance or GuidanceConfig(self.cfg.sampler.omega_env, self.cfg.sampler.omega_speech)
        sampler = sampler or SamplerConfig(self.cfg.sampler.steps, self.cfg.sampler.eta, self.cfg.seed_for("sampler"))
        src_path = None
        if not isinstance(source, AudioClip):
            src_path = Path(source)
            source = read_wav(src_path)
        clap, backbone = self.clap(), self.backbone()
        c_env = clap_embed_text(clap, env_text)
        speaker_id, e_spk = text_to_timbre(spk_text, clap, self.adapter(), self.tkb())
        if tokens is None:
            tokens = self.source_tokens(source, src_path)
        frames = n_frames(len(source))
        schedule = make_schedule(self.cfg.model.T, self.cfg.model.schedule)
        latent = sample_latent(backbone, c_env, tokens, e_spk, frames, schedule, guidance, sampler)
        audio = latent_decode(latent, n_samples=len(source))
        return Conversion(audio, latent, np.asarray(tokens), speaker_id)

    # ----------------------------------------------------------- evaluation

    def conversion_requests(self):
        """Held-out sources paired with a different target speaker, cycling through env classes."""
        f = self.features()
        rng = np.random.default_rng(self.cfg.seed_for("eval"))
        pool = np.flatnonzero(f.heldout & ~f.silent)
        speakers = sorted(int(s) for s in np.unique(f.speaker))
        env_classes = [c for c in ENV_CLASSES if c in self.cfg.corpus.env_classes]
        out = []
        for i in range(self.cfg.eval.n_conversions):
            env = env_classes[i % len(env_classes)]
            src = int(pool[rng.integers(len(pool))])
            target = int(rng.choice([s for s in speakers if s != f.speaker[src]]))
            out.append(
                {
                    "source_index": src,
                    "env": env,
                    "env_text": env_caption(env, int(rng.integers(2))),
                    "target_speaker": target,
                    "spk_text": speaker_caption(speaker_profile(target).descriptor_bucket, int(rng.integers(4))),
                }
            )
        return out

    def evaluate(self, out_dir=None) -> EvalReport:
        self.require("manifest", "clap", "speaker", "backbone", "adapter", "tkb")
        f = self.features()
        manifest = self.path("manifest")
        content_probe, env_probe = self.probes()
        net, ids, table = self.speaker()
        out_dir = Path(out_dir) if out_dir else self.cfg.work_dir / "eval"
        out_dir.mkdir(parents=True, exist_ok=True)
        requests = self.conversion_requests()
        frames, tokens, envs, targets, retrieved = [], [], [], [], []
        for i, req in enumerate(requests):
            rec = f.records[req["source_index"]]
            src = load_record_audio(manifest, rec, "clean")
            conv = self.convert(src, req["env_text"], req["spk_text"], tokens=tokenize_content(rec.scene, "oracle"))
            write_wav(conv.audio, out_dir / f"conversion_{i:03d}.wav")
            frames.append(latent_encode(conv.audio))
            tokens.append(conv.tokens)
            envs.append(ENV_LABELS.index(req["env"]))
            targets.append(req["target_speaker"])
            retrieved.append(conv.speaker_id)
            log.info("conversion %d/%d done", i + 1, len(requests))
        metrics = score_conversions(
            np.stack(frames), np.stack(tokens), envs, targets, content_probe, env_probe, net, ids, table
        )
        metrics["retrieval_accuracy"] = float(np.mean(np.array(retrieved) == np.array(targets)))
        ho = f.heldout & ~f.silent
        metrics["probe_content_heldout"] = content_accuracy(content_probe, f.clean[ho], f.content[ho])
        metrics["probe_content_heldout_mixture"] = content_accuracy(content_probe, f.mixture[ho], f.content[ho])
        metrics["probe_env_heldout"] = env_accuracy(env_probe, f.mixture[f.heldout], f.env_label[f.heldout])
        report = EvalReport(
            metrics, self.cfg.hash(), checkpoint.config_hash(manifest.read_text()), {"requests": requests}
        )
        report.save(out_dir / "report.json")
        return report

    # ---------------------------------------------------------------- plots

    def visualize(self, out_dir=None) -> tuple[list[Path], dict]:
        """PCA scatters of raw vs adapted CLAP embeddings for a random speaker subset.

        A desk speaker has fewer than 50 recorded clips, so each speaker's pool
        holds the clean and mixed renderings of all its non-silent clips.
        Silhouettes are reported on held-out mixtures only.
        """
        self.require("manifest", "clap", "adapter")
        f = self.features()
        ev = self.cfg.eval
        rng = np.random.default_rng(self.cfg.seed_for("viz"))
        speakers = np.unique(f.speaker)
        chosen = np.sort(rng.choice(speakers, size=min(ev.viz_speakers, speakers.size), replace=False))
        clap, adapter = self.clap(), self.adapter()
        rows, labels = [], []
        for s in chosen:
            idx = np.flatnonzero(~f.silent & (f.speaker == s))
            pool = np.concatenate([f.mixture[idx], f.clean[idx]])
            pick = np.sort(rng.choice(len(pool), size=min(ev.viz_clips, len(pool)), replace=False))
            rows.append(pool[pick])
            labels.append(np.full(pick.size, s))
        frames = np.concatenate(rows)
        labels = np.concatenate(labels)
        raw = clap_embed_audio(clap, frames)
        adapted = adapt_each(adapter, raw)
        out_dir = Path(out_dir) if out_dir else self.cfg.work_dir / "viz"
        paths = emit_plots(raw, adapted, labels, out_dir)
        ho = f.heldout & ~f.silent
        raw_ho = clap_embed_audio(clap, f.mixture[ho])
        stats = {
            "silhouette_raw": silhouette(raw_ho, f.speaker[ho]),
            "silhouette_adapted": silhouette(adapt_each(adapter, raw_ho), f.speaker[ho]),
        }
        layout = {"speakers": [int(s) for s in chosen], "points_per_speaker": [int(r.shape[0]) for r in rows]}
        (out_dir / "stats.json").write_text(json.dumps({**stats, "layout": layout}, indent=2))
        return paths, stats


def timbre_table(features: CorpusFeatures, net: SpeakerNet) -> tuple[np.ndarray, np.ndarray]:
    """Per-speaker unit-norm mean of trained speaker embeddings over clean training clips."""
    keep = features.train & ~features.silent
    emb = speaker_embed(features.clean[keep], net=net)
    ids = np.unique(features.speaker[keep])
    table = np.stack([emb[features.speaker[keep] == s].mean(axis=0) for s in ids])
    return ids.astype(np.int64), table / np.linalg.norm(table, axis=1, keepdims=True)
