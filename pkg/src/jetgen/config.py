"""Declarative run configuration (YAML) with strict key checking."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .evalsuite import EvalConfig, SpectralFeatureConfig
from .flow import FlowConfig
from .model import JetConfig
from .objectives import LossWeights
from .synthgen import BurstSpec, ClassSpec, CorpusSpec, EnvelopeSpec, PeakSpec
from .trainer import TrainConfig, desk_train_config


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


MODEL_KEYS = ("patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "time_freq_dim", "gated")


@dataclass(frozen=True)
class ModelSection:
    """Architecture only; geometry and class count come from the corpus."""

    patch_size: int = 50
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    time_freq_dim: int = 64
    gated: bool = True


@dataclass(frozen=True)
class SampleSection:
    count: int = 64
    class_id: int = 0
    seed: int = 100
    use_ema: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/desk"
    eval_seed: int = 1001
    corpus: CorpusSpec = field(default_factory=lambda: CorpusSpec(seed=1))
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=desk_train_config)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sample: SampleSection = field(default_factory=SampleSection)

    def jet_config(self) -> JetConfig:
        m = self.model
        return JetConfig(channels=self.corpus.channels, samples=self.corpus.samples, patch_size=m.patch_size,
                         embed_dim=m.embed_dim, depth=m.depth, heads=m.heads,
                         num_classes=len(self.corpus.classes), label_drop=self.train.label_drop,
                         mlp_ratio=m.mlp_ratio, time_freq_dim=m.time_freq_dim, gated=m.gated)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def eval_corpus(self) -> CorpusSpec:
        return replace(self.corpus, seed=self.eval_seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["corpus"] = self.corpus.to_dict()
        # the run seed governs training
        d["train"] = {k: v for k, v in self.train.to_dict().items() if k != "seed"}
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(json.loads(json.dumps(self.to_dict())), sort_keys=True)

    def validate(self) -> "RunConfig":
        self.corpus.validate()
        self.jet_config()
        if self.sample.count < 0:
            raise ConfigError("sample.count must be >= 0")
        if not 0 <= self.sample.class_id < len(self.corpus.classes):
            raise ConfigError(f"sample.class_id must lie in [0, {len(self.corpus.classes) - 1}]")
        return self


# nested dataclass types per (section path)
_NESTED = {
    RunConfig: {"corpus": CorpusSpec, "model": ModelSection, "train": TrainConfig, "eval": EvalConfig,
                "sample": SampleSection},
    TrainConfig: {"flow": FlowConfig, "weights": LossWeights},
    EvalConfig: {"spectral": SpectralFeatureConfig},
    ClassSpec: {"peak": PeakSpec, "bursts": BurstSpec, "envelope": EnvelopeSpec},
}
_FORBIDDEN = {TrainConfig: ("seed",)}


def _check_keys(cls, data: Any, path: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - set(_FORBIDDEN.get(cls, ()))
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ConfigError(f"unknown key {where!r}")
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None and value is not None:
            _check_keys(sub, value, where)
        if cls is CorpusSpec and key == "classes":
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list")
            for i, c in enumerate(value):
                _check_keys(ClassSpec, c, f"{where}[{i}]")


def _build(cls, data: dict, path: str):
    data = dict(data)
    for key, sub in _NESTED.get(cls, {}).items():
        if key in data and data[key] is not None:
            data[key] = _build(sub, data[key], f"{path}.{key}" if path else key)
    if cls is CorpusSpec:
        if "classes" in data:
            data["classes"] = tuple(_build(ClassSpec, c, f"{path}.classes[{i}]")
                                    for i, c in enumerate(data["classes"]))
        if "counts" in data:
            data["counts"] = tuple(int(n) for n in data["counts"])
    if cls is TrainConfig and "betas" in data:
        data["betas"] = tuple(data["betas"])
    defaults = _defaults(cls)
    try:
        return replace(defaults, **data) if defaults is not None else cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _defaults(cls):
    if cls is TrainConfig:
        return desk_train_config()
    if cls is CorpusSpec:
        return CorpusSpec(seed=1)
    return None


def config_from_dict(data: Optional[dict]) -> RunConfig:
    data = data or {}
    _check_keys(RunConfig, data, "")
    cfg = _build(RunConfig, data, "")
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return config_from_dict({})
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {p}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML ({exc})") from exc
    return config_from_dict(data)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    """Echo the fully resolved configuration next to a command's outputs."""
    path = Path(out_dir) / "config.resolved.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.to_yaml())
    return path


def with_overrides(cfg: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Apply dotted-path overrides such as ``{"train.flow.base_mode": "zero"}``."""
    d = cfg.to_dict()
    for dotted, value in overrides.items():
        node = d
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return config_from_dict(d)
