"""Run configuration: defaults, JSON file, and ``key=value`` overrides.

Resolution order is defaults < config file < command-line overrides. Unknown
keys are rejected at every level, and the resolved tree is what gets written
into manifests and checkpoints.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

VARIANTS = ("A", "B", "C", "D")
TASKS = ("reach", "push", "pickplace")


@dataclass
class BackboneConfig:
    d_z: int = 128
    layers: int = 6
    extract_layer: int = 4
    n_heads: int = 4
    patch_size: int = 4
    unshuffle: int = 2
    d_patch: int = 48
    vocab: int = 64
    max_len: int = 64
    mlp_ratio: int = 2

    def validate(self, image_size: int = 32):
        if not 1 <= self.extract_layer <= self.layers:
            raise ConfigError(f"backbone.extract_layer must lie in [1, {self.layers}], got {self.extract_layer}")
        if self.d_z % self.n_heads:
            raise ConfigError("backbone.d_z must be divisible by backbone.n_heads")
        if image_size % (self.patch_size * self.unshuffle):
            raise ConfigError(
                f"image size {image_size} not divisible by patch_size*unshuffle="
                f"{self.patch_size * self.unshuffle}")

    def image_tokens(self, image_size: int = 32) -> int:
        side = image_size // (self.patch_size * self.unshuffle)
        return side * side


@dataclass
class DitConfig:
    depth: int = 4
    width: int = 128
    heads: int = 4
    time_dim: int = 64
    mlp_ratio: int = 2

    def validate(self):
        if self.depth < 1:
            raise ConfigError("dit.depth must be >= 1")
        if self.width % self.heads:
            raise ConfigError("dit.width must be divisible by dit.heads")
        if self.time_dim % 2:
            raise ConfigError("dit.time_dim must be even")


@dataclass
class IntegrationConfig:
    variant: str = "A"


@dataclass
class ChunkConfig:
    h: int = 8


@dataclass
class ActionConfig:
    dim: int = 3


@dataclass
class StateConfig:
    dim: int = 4


@dataclass
class FlowConfig:
    beta_alpha: float = 1.5
    beta_beta: float = 1.0
    clamp: list = field(default_factory=lambda: [0.02, 0.98])


@dataclass
class SamplerConfig:
    steps: int = 10


@dataclass
class TrainConfig:
    stage1_steps: int = 2000
    stage2_steps: int = 4000
    batch_size: int = 32
    lr_stage1: float = 1e-3
    lr_backbone: float = 1e-4
    lr_expert: float = 3e-4
    warmup: int = 100
    weight_decay: float = 1e-4
    betas: list = field(default_factory=lambda: [0.9, 0.95])
    eps: float = 1e-8
    pixel_noise: float = 0.0

    def validate(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ConfigError("train step counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be positive")
        if self.lr_stage1 <= 0 or self.lr_expert <= 0 or self.lr_backbone < 0:
            raise ConfigError("learning rates must be positive (backbone lr may be 0)")


@dataclass
class EnvConfig:
    task: str = "reach"
    image_size: int = 32
    n_views: int = 2
    horizon: int = 60
    replan_every: int = 0  # 0 means "execute the whole chunk"


@dataclass
class RunConfig:
    seed: int = 0
    run_id: str = ""
    out_dir: str = "runs"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dit: DitConfig = field(default_factory=DitConfig)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    action: ActionConfig = field(default_factory=ActionConfig)
    state: StateConfig = field(default_factory=StateConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def validate(self) -> "RunConfig":
        self.backbone.validate(self.env.image_size)
        self.dit.validate()
        self.train.validate()
        if self.dit.width != self.backbone.d_z:
            raise ConfigError(f"dit.width ({self.dit.width}) must equal backbone.d_z ({self.backbone.d_z})")
        if self.integration.variant not in VARIANTS:
            raise ConfigError(f"integration.variant must be one of {VARIANTS}, got {self.integration.variant!r}")
        if self.env.task not in TASKS:
            raise ConfigError(f"env.task must be one of {TASKS}, got {self.env.task!r}")
        if self.chunk.h < 1 or self.action.dim < 1 or self.state.dim < 1:
            raise ConfigError("chunk.h, action.dim and state.dim must be positive")
        if self.sampler.steps < 1:
            raise ConfigError("sampler.steps must be >= 1")
        lo, hi = self.flow.clamp
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigError(f"flow.clamp must satisfy 0 <= lo < hi <= 1, got {self.flow.clamp}")
        if self.flow.beta_alpha <= 0 or self.flow.beta_beta <= 0:
            raise ConfigError("flow beta parameters must be positive")
        if self.integration.variant == "C" and self.dit.depth > self.backbone.layers:
            raise ConfigError(
                f"variant C needs dit.depth ({self.dit.depth}) <= backbone.layers ({self.backbone.layers})")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "RunConfig":
        cfg = cls()
        if data:
            _merge(cfg, data, "")
        return cfg

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Copy with dotted-key overrides applied, e.g. ``{"dit.depth": 2}``."""
        cfg = RunConfig.from_dict(self.to_dict())
        for key, value in overrides.items():
            cfg.set(key, value)
        return cfg

    def set(self, key: str, value: Any) -> None:
        *path, leaf = key.split(".")
        node = self
        for part in path:
            if not dataclasses.is_dataclass(node) or part not in _field_names(node):
                raise ConfigError(f"unknown config key {key!r}")
            node = getattr(node, part)
        if not dataclasses.is_dataclass(node) or leaf not in _field_names(node):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(node, leaf)
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"config key {key!r} names a group, not a value")
        setattr(node, leaf, _coerce(value, current, key))


def _field_names(node) -> set[str]:
    return {f.name for f in dataclasses.fields(node)}


def _merge(node, data: dict, prefix: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"config group {prefix or '<root>'} must be an object")
    names = _field_names(node)
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"unknown config key {dotted!r}")
        current = getattr(node, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, dotted + ".")
        else:
            setattr(node, key, _coerce(value, current, dotted))


def _coerce(value, current, key):
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse value {value!r} for {key}") from exc
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, str):
            return str(value)
        if isinstance(current, list):
            if not isinstance(value, list) or len(value) != len(current):
                raise TypeError
            return [type(c)(v) for c, v in zip(current, value)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc
    return value


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    data = json.loads(Path(path).read_text()) if path else None
    cfg = RunConfig.from_dict(data)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()
