"""Experiment configuration: dataclasses, YAML/JSON loading and dotted overrides.

A config document mirrors ``TrainConfig``: top-level training keys plus
``loss``, ``model`` and ``data`` sections. Unknown keys are rejected.
Precedence is command-line override > file > dataclass default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import yaml

from .errors import ConfigError
from .losses import LossConfig
from .spatial import SWIN_VARIANTS, BackboneSpec


@dataclass
class ModelConfig:
    backbone: str = "stub"
    backbone_weights: str | None = None
    input_size: list[int] = field(default_factory=lambda: [64, 64])
    stage_dims: list[list[int]] = field(default_factory=lambda: [[16, 16, 32], [8, 8, 64]])
    stub_seed: int = 0
    target_tokens: int = 4
    token_dim: int = 32
    fusion_layers: int = 2
    fusion_heads: int = 4
    embed_dim: int = 32
    temporal_layers: int = 1
    temporal_heads: int = 4
    max_frames: int = 64
    ff_mult: int = 2
    contrastive_level: str = "video"

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(
            kind=self.backbone,
            weights_path=self.backbone_weights,
            stage_dims=[tuple(s) for s in self.stage_dims],
            input_size=tuple(self.input_size),
            seed=self.stub_seed,
        )

    def validate(self) -> "ModelConfig":
        if self.backbone != "stub" and self.backbone not in SWIN_VARIANTS:
            raise ConfigError(f"model.backbone must be 'stub' or one of {SWIN_VARIANTS}")
        if len(self.input_size) != 2:
            raise ConfigError("model.input_size must be [height, width]")
        if any(len(s) != 3 for s in self.stage_dims):
            raise ConfigError("model.stage_dims entries must be [h, w, c]")
        for name in ("target_tokens", "token_dim", "fusion_heads", "embed_dim",
                     "temporal_heads", "max_frames", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.fusion_layers < 0 or self.temporal_layers < 0:
            raise ConfigError("layer counts must be >= 0")
        if self.token_dim % self.fusion_heads:
            raise ConfigError("model.token_dim must be divisible by model.fusion_heads")
        if self.embed_dim % self.temporal_heads:
            raise ConfigError("model.embed_dim must be divisible by model.temporal_heads")
        if self.contrastive_level not in ("video", "frame"):
            raise ConfigError("model.contrastive_level must be 'video' or 'frame'")
        self.backbone_spec().validate()
        return self

    def architecture(self) -> dict:
        """Fields that determine tensor shapes and weights; the weights path is excluded."""
        arch = dataclasses.asdict(self)
        arch.pop("backbone_weights")
        return arch

    def config_hash(self) -> str:
        blob = json.dumps(self.architecture(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DataConfig:
    manifest: str | None = None
    vmaf_scores: str | None = None
    val_manifest: str | None = None
    val_fraction: float = 0.2
    frame_count: int = 8
    workers: int = 0

    def validate(self) -> "DataConfig":
        if self.frame_count < 1:
            raise ConfigError("data.frame_count must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("data.val_fraction must lie in [0, 1)")
        return self


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr0: float = 1e-4
    lr_decay: float = 0.95
    epochs: int = 50
    seed: int = 0
    eval_every: int = 1
    checkpoint_dir: str = "runs/default"
    batches_per_epoch: int | None = None
    grad_clip: float | None = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    init_head_bias: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "TrainConfig":
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not (math.isfinite(self.lr0) and self.lr0 >= 0):
            raise ConfigError("lr0 must be a finite number >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.epochs < 1 or self.eval_every < 1:
            raise ConfigError("epochs and eval_every must be >= 1")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            raise ConfigError("batches_per_epoch must be >= 1")
        if self.grad_clip is not None and self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0 (0 or null disables clipping)")
        n_a = self.loss.p * self.batch_size
        if abs(n_a - round(n_a)) > 1e-9:
            raise ConfigError(f"batch_size * loss.p = {n_a:g} must be an integer")
        self.loss.validate()
        self.model.validate()
        self.data.validate()
        return self


_SECTIONS = {"loss": LossConfig, "model": ModelConfig, "data": DataConfig}


def _coerce(value, default, key: str):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key} expects a list, got {value!r}")
    return value


def _build(cls, doc: dict, prefix: str = ""):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in doc.items():
        key = prefix + name
        if cls is TrainConfig and name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value or {}, key + ".")
        else:
            kwargs[name] = _coerce(value, getattr(defaults, name), key)
    return cls(**kwargs)


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(doc: dict) -> TrainConfig:
    return _build(TrainConfig, doc).validate()


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError:
        value = raw
    return key.split("."), value


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    known = {k for k, _ in config_keys()}
    for item in overrides:
        path, value = parse_override(item)
        dotted = ".".join(path)
        if dotted not in known:
            raise ConfigError(f"unknown override key {dotted!r}")
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if node is None:
                node = {}
        node[path[-1]] = value
    return doc


_PATH_KEYS = (("data", "manifest"), ("data", "vmaf_scores"), ("data", "val_manifest"),
              ("model", "backbone_weights"), ("checkpoint_dir",))


def _resolve_paths(doc: dict, base: Path) -> None:
    for path in _PATH_KEYS:
        node = doc
        for part in path[:-1]:
            node = node.get(part) if isinstance(node, dict) else None
        if isinstance(node, dict) and isinstance(node.get(path[-1]), str):
            p = Path(node[path[-1]]).expanduser()
            node[path[-1]] = str(p if p.is_absolute() else base / p)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must hold a key/value mapping")
    _resolve_paths(doc, path.parent)
    return doc


def load_config(path=None, overrides: Sequence[str] = ()) -> TrainConfig:
    """File values over defaults, then overrides over both.

    Relative paths in the file resolve against the file's directory;
    relative paths in overrides resolve against the working directory.
    """
    doc = read_config_file(path) if path is not None else {}
    doc = apply_overrides(doc, overrides)
    return config_from_dict(doc)


def save_config(cfg: TrainConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False), encoding="utf-8")
    return path


def config_keys() -> list[tuple[str, Any]]:
    """Every dotted key accepted by config files and overrides, with its default."""
    keys = []
    defaults = TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        if f.name in _SECTIONS:
            section = getattr(defaults, f.name)
            keys += [(f"{f.name}.{g.name}", getattr(section, g.name)) for g in dataclasses.fields(section)]
        else:
            keys.append((f.name, getattr(defaults, f.name)))
    return keys
