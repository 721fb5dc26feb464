"""Experiment configuration: a JSON document with ``model``, ``train``, ``data`` and ``output_dir``.

Schema (every key optional, defaults shown)::

    {
      "model": {"backbone": {...}, "sam": {...}, "tsm": {...}, "loss": {"lam": 0.0}, "init_seed": 0},
      "train": {"iterations": 2000, "lr0": 0.016, "momentum": 0.9, "batch": 16, "seq_len": 30,
                "seed": 0, "eval_every": 500, "clip_norm": 1.0, "checkpoint_every": 0,
                "optimizer": "sgd"},
      "data": {"dataset_dir": null, "generator": {...DataGenConfig...}},
      "output_dir": "runs/default"
    }

``optimizer`` is ``"sgd"`` (momentum, the default) or ``"adam"`` (``lr0`` is
then the Adam step size and ``momentum`` is unused).

``STAGEGAZE_OUTPUT_DIR`` and ``STAGEGAZE_SEED`` override ``output_dir`` and ``train.seed``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..datagen import DataGenConfig
from ..numerics import ConfigError
from ..pipeline import ModelConfig

ENV_OUTPUT_DIR = "STAGEGAZE_OUTPUT_DIR"
ENV_SEED = "STAGEGAZE_SEED"
OPTIMIZERS = ("sgd", "adam")


def _strict(klass, d: dict | None, label: str):
    d = dict(d or {})
    unknown = set(d) - set(klass.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {label} keys: {sorted(unknown)}")
    return klass(**d)


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr0: float = 0.016
    momentum: float = 0.9
    batch: int = 16
    seq_len: int = 30
    seed: int = 0
    eval_every: int = 500
    clip_norm: float = 1.0
    checkpoint_every: int = 0
    optimizer: str = "sgd"

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.lr0 < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("lr0 must be >= 0 and momentum in [0, 1)")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.seq_len < 2:
            raise ConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.eval_every < 0 or self.checkpoint_every < 0 or self.clip_norm < 0:
            raise ConfigError("eval_every, checkpoint_every and clip_norm must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")


@dataclass
class DataConfig:
    dataset_dir: str | None = None
    generator: DataGenConfig = field(default_factory=DataGenConfig)

    @classmethod
    def from_dict(cls, d: dict | None) -> "DataConfig":
        d = dict(d or {})
        unknown = set(d) - {"dataset_dir", "generator"}
        if unknown:
            raise ConfigError(f"unknown data keys: {sorted(unknown)}")
        try:
            gen = DataGenConfig.from_dict(d.get("generator") or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid generator config: {exc}") from None
        return cls(dataset_dir=d.get("dataset_dir"), generator=gen)

    def to_dict(self) -> dict:
        return {"dataset_dir": self.dataset_dir, "generator": self.generator.to_dict()}


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        try:
            self.data.generator.validate()
        except ValueError as exc:
            raise ConfigError(f"invalid generator config: {exc}") from None
        if self.data.dataset_dir is None and tuple(self.data.generator.image_size) != tuple(self.model.backbone.image_size):
            raise ConfigError(f"generator image size {tuple(self.data.generator.image_size)} does not match "
                              f"backbone image size {tuple(self.model.backbone.image_size)}")
        if self.model.tsm.variant == "transformer" and self.train.seq_len > self.model.tsm.max_seq_len:
            raise ConfigError(f"seq_len {self.train.seq_len} exceeds transformer max_seq_len {self.model.tsm.max_seq_len}")

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train), "data": self.data.to_dict(),
                "output_dir": self.output_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(d) - {"model", "train", "data", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(d.get("model") or {})
        except TypeError as exc:
            raise ConfigError(f"invalid model config: {exc}") from None
        return cls(model=model, train=_strict(TrainConfig, d.get("train"), "train"),
                   data=DataConfig.from_dict(d.get("data")), output_dir=str(d.get("output_dir", "runs/default")))


def load_config(path: str | os.PathLike | None, env: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (or defaults when ``path`` is None), apply env overrides, validate."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno}") from None
    cfg = ExperimentConfig.from_dict(doc)
    apply_env_overrides(cfg, os.environ if env is None else env)
    cfg.validate()
    return cfg


def apply_env_overrides(cfg: ExperimentConfig, env) -> ExperimentConfig:
    if env.get(ENV_OUTPUT_DIR):
        cfg.output_dir = env[ENV_OUTPUT_DIR]
    if env.get(ENV_SEED):
        try:
            cfg.train.seed = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env[ENV_SEED]!r}") from None
    return cfg
