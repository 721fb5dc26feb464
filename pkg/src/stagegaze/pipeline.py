"""The full video gaze model: backbone -> SAM -> TSM -> gaze prediction layer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import Backbone, BackboneConfig, flatten_features
from .numerics import ConfigError, Module, Tensor, no_grad
from .sam import SamConfig, build_sam, sam_sequence
from .tsm import GazePredictionLayer, LossConfig, TsmConfig, build_tsm


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    sam: SamConfig = field(default_factory=SamConfig)
    tsm: TsmConfig = field(default_factory=TsmConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    init_seed: int = 0

    def validate(self) -> None:
        self.backbone.validate()
        self.sam.validate()
        self.tsm.validate()
        self.loss.validate()
        k = self.backbone.out_channels
        if self.sam.in_channels is not None and self.sam.in_channels != k:
            raise ConfigError(f"SAM expects {self.sam.in_channels} input channels but the backbone emits {k}")
        width = self.sam.output_width(k)
        if self.tsm.d_in is not None and self.tsm.d_in != width:
            raise ConfigError(f"TSM expects input width {self.tsm.d_in} but the SAM emits {width}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"]["image_size"] = list(self.backbone.image_size)
        d["backbone"]["out_spatial"] = list(self.backbone.out_spatial)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        def build(klass, sub):
            sub = dict(sub or {})
            unknown = set(sub) - set(klass.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
            for key in ("image_size", "out_spatial"):
                if key in sub:
                    sub[key] = tuple(sub[key])
            return klass(**sub)

        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(backbone=build(BackboneConfig, d.get("backbone")), sam=build(SamConfig, d.get("sam")),
                   tsm=build(TsmConfig, d.get("tsm")), loss=build(LossConfig, d.get("loss")),
                   init_seed=int(d.get("init_seed", 0)))


@dataclass
class StageOutput:
    gaze: Tensor  # (..., n, 2)
    pog: Tensor | None
    attention_maps: np.ndarray | None
    features: Tensor | None = None


class StageModel(Module):
    """Backbone, SAM, TSM and gaze head with dotted parameter names."""

    def __init__(self, cfg: ModelConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.backbone = Backbone(cfg.backbone, rng)
        k = cfg.backbone.out_channels
        self.sam = build_sam(cfg.sam, k, tuple(cfg.backbone.out_spatial), rng)
        self.tsm = build_tsm(cfg.tsm, cfg.sam.output_width(k), rng)
        self.head = GazePredictionLayer(cfg.tsm.d_t, rng, with_pog=cfg.loss.lam > 0)
        self.dropout_rng = np.random.default_rng([cfg.init_seed, 1])
        self.frozen = False
        self.assign_names()

    def freeze(self) -> "StageModel":
        self.eval()
        self.frozen = True
        return self

    def __call__(self, frames, keep_maps: bool = False, keep_features: bool = False) -> StageOutput:
        return stage_forward(frames, self, keep_maps=keep_maps, keep_features=keep_features)

    def predict(self, frames: np.ndarray) -> np.ndarray:
        """Eval-mode gaze for ``(..., n, h0, w0, 3)`` frames, no graph kept."""
        was = self.training
        self.eval()
        try:
            with no_grad():
                return stage_forward(frames, self).gaze.data.copy()
        finally:
            self.train(was)

    def frame_features(self, frames: np.ndarray) -> np.ndarray:
        """Flattened backbone features per frame, ``(..., h*w*k)``."""
        with no_grad():
            return flatten_features(self.backbone(np.asarray(frames, dtype=np.float64)))


def stage_forward(frames, model: StageModel, keep_maps: bool = False, keep_features: bool = False) -> StageOutput:
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
    feats = model.backbone(x)
    rng = model.dropout_rng if model.training else None
    sam_out = sam_sequence(feats, model.sam, rng=rng, keep_maps=keep_maps)
    e = model.tsm(sam_out.z)
    gaze, pog = model.head(e)
    return StageOutput(gaze, pog, sam_out.attention_maps, feats if keep_features else None)
