"""Run configuration: one YAML file, every default written back out."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from envvc.corpus import ENV_CLASSES, CorpusConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    d_cond: int = 64
    widths: tuple = (64, 128, 256)
    heads: int = 4
    adapter_layers: int = 4
    schedule: str = "linear"
    T: int = 1000


@dataclass
class ClapSection:
    steps: int = 1500
    batch_classes: int = 16
    lr: float = 1e-3


@dataclass
class SpeakerSection:
    steps: int = 2000
    batch: int = 32
    crop: int = 100
    lr: float = 1e-3


@dataclass
class BackboneSection:
    steps: int = 14000
    batch: int = 8
    crop_frames: int = 128
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    weight_decay: float = 0.0
    p_drop: float = 0.1
    env_noise: float = 0.06
    env_embedding_source: str = "env_track"


@dataclass
class AdapterSection:
    steps: int = 1500
    batch: int = 64
    lr: float = 1e-3
    alpha: float = 0.2
    loss_orientation: str = "conventional"
    set_size: int = 1


@dataclass
class ProbeSection:
    content_steps: int = 3000
    env_steps: int = 2000


@dataclass
class TrainSection:
    clap: ClapSection = field(default_factory=ClapSection)
    speaker: SpeakerSection = field(default_factory=SpeakerSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    probes: ProbeSection = field(default_factory=ProbeSection)


@dataclass
class SamplerSection:
    steps: int = 50
    eta: float = 0.0
    omega_env: float = 1.5
    omega_speech: float = 1.5


@dataclass
class EvalSection:
    n_conversions: int = 50
    viz_speakers: int = 10
    viz_clips: int = 50


@dataclass
class PathsSection:
    work_dir: str = "run"
    corpus_dir: str = ""  # empty: <work_dir>/corpus


@dataclass
class RunConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        d = _plain(dataclasses.asdict(self))
        # the corpus seed is derived from the root seed, never set directly
        del d["corpus"]["seed"]
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()[:16]

    @property
    def work_dir(self) -> Path:
        return Path(self.paths.work_dir)

    @property
    def corpus_dir(self) -> Path:
        return Path(self.paths.corpus_dir) if self.paths.corpus_dir else self.work_dir / "corpus"

    def seed_for(self, module: str) -> int:
        return derive_seed(self.seed, module)

    def corpus_config(self) -> CorpusConfig:
        return dataclasses.replace(self.corpus, seed=self.seed_for("corpus"))

    def validate(self):
        if self.train.backbone.env_embedding_source not in ("env_track", "mixture"):
            raise ConfigError("train.backbone.env_embedding_source must be 'env_track' or 'mixture'")
        if self.train.backbone.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("train.backbone.lr_schedule must be 'constant' or 'cosine'")
        if self.train.adapter.loss_orientation not in ("conventional", "paper"):
            raise ConfigError("train.adapter.loss_orientation must be 'conventional' or 'paper'")
        if self.model.schedule not in ("linear", "cosine"):
            raise ConfigError("model.schedule must be 'linear' or 'cosine'")
        unknown = set(self.corpus.env_classes) - set(ENV_CLASSES)
        if unknown:
            raise ConfigError(f"unknown env classes: {sorted(unknown)}")
        if not 1 <= self.sampler.steps <= self.model.T:
            raise ConfigError(f"sampler.steps must lie in [1, {self.model.T}]")
        return self


def derive_seed(root: int, module: str) -> int:
    """Independent, reproducible 31-bit seed for ``module`` from the root seed."""
    digest = hashlib.sha256(f"{int(root)}:{module}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if cls is CorpusConfig:
        del fields["seed"]
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        elif isinstance(default, tuple) or (default is None and isinstance(value, list)):
            kwargs[name] = tuple(value) if value is not None else None
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{key}: expected true/false")
            kwargs[name] = value
        elif isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
            kwargs[name] = float(value)
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{key}: expected an integer")
            kwargs[name] = value
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load_config(path=None) -> RunConfig:
    """Parse ``path`` (or return defaults when ``None``)."""
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return from_dict(data)
