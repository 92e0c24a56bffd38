"""Architecture and training hyperparameters, plus config-file loading."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class ModelConfig:
    vocab_size: int = 200
    num_classes: int = 2
    max_len: int = 32
    num_blocks: int = 6
    num_heads: int = 4
    model_dim: int = 512          # D; token and position halves are D/2 each
    slfn_dim: int = 768           # D_h
    exit_hidden: int | None = None  # defaults to D/4
    dropout: float = 0.3
    binarizer: str = "b2"         # "b2" | "clip"
    slfn_rule: str = "literal"    # "literal" | "corrected"
    share_sh_weight: bool = False
    use_slfn: bool = True
    early_exit: bool = True       # False: only the final exit head exists
    init_range: float = 0.5
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.validate()

    @property
    def embed_dim(self) -> int:
        return self.model_dim // 2

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def exit_dim(self) -> int:
        return self.exit_hidden or max(1, self.model_dim // 4)

    @property
    def exit_blocks(self) -> list[int]:
        """1-based block indices that carry an exit head."""
        if self.early_exit:
            return list(range(1, self.num_blocks + 1))
        return [self.num_blocks]

    def validate(self) -> None:
        positive = ("vocab_size", "max_len", "num_blocks", "num_heads", "model_dim", "slfn_dim")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must be at least 2")
        if self.model_dim % 2:
            raise ConfigError("model.model_dim must be even (token || position halves)")
        if self.model_dim % self.num_heads:
            raise ConfigError("model.num_heads must divide model.model_dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must lie in [0, 1)")
        if self.binarizer not in ("b2", "clip"):
            raise ConfigError(f"model.binarizer must be 'b2' or 'clip', got {self.binarizer!r}")
        if self.slfn_rule not in ("literal", "corrected"):
            raise ConfigError(f"model.slfn_rule must be 'literal' or 'corrected', got {self.slfn_rule!r}")
        if not 0.0 < self.init_range <= 1.0:
            raise ConfigError("model.init_range must lie in (0, 1]")


@dataclass
class TrainConfig:
    lr: float = 0.01
    lr_min: float = 1e-4
    lr_decay: float = 0.5
    plateau_patience: int = 2
    early_stop_patience: int = 5
    batch_size: int = 32
    epochs: int = 50
    delta: float = 1e-4
    seed: int = 0
    metric: str = "accuracy"      # "accuracy" | "f1" | "mcc"
    clamp_eps: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lr", "lr_min", "batch_size", "epochs", "lr_decay", "clamp_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.lr_min > self.lr:
            raise ConfigError("train.lr_min must not exceed train.lr")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be at least 1")
        if self.metric not in ("accuracy", "f1", "mcc"):
            raise ConfigError(f"train.metric must be accuracy, f1 or mcc, got {self.metric!r}")


@dataclass
class DataConfig:
    """Where examples come from: a synthetic task or GLUE-style TSV files."""

    synthetic: str | None = "keyword-sentiment"
    train_path: str | None = None
    dev_path: str | None = None
    text_columns: list[str] = field(default_factory=lambda: ["sentence"])
    label_column: str = "label"
    num_train: int = 2000
    num_dev: int = 200
    data_seed: int = 1234

    def validate(self) -> None:
        if self.synthetic is None and not self.train_path:
            raise ConfigError("data needs either 'synthetic' or 'train_path'")
        if self.synthetic not in (None, "keyword-sentiment", "pair-entailment"):
            raise ConfigError(f"unknown synthetic task {self.synthetic!r}")
        if not 1 <= len(self.text_columns) <= 2:
            raise ConfigError("data.text_columns must name one or two columns")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, values: dict[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    unknown = set(raw) - {"model", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig(
        model=_build(ModelConfig, dict(raw.get("model", {})), "model"),
        train=_build(TrainConfig, dict(raw.get("train", {})), "train"),
        data=_build(DataConfig, dict(raw.get("data", {})), "data"),
    )
    cfg.data.validate()
    return cfg


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Read a TOML or JSON config; ``None`` yields all defaults."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(raw)


def model_config_from_dict(values: dict[str, Any]) -> ModelConfig:
    return _build(ModelConfig, dict(values), "model")
