"""Per-frame CNN feature extractor shared across timestamps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import F, Conv2d, ConfigError, Module, ShapeError, Tensor


@dataclass
class BackboneConfig:
    """Stride-2 conv ladder. Each hidden stage and the output stage halve H and W.

    The 5x5 default gives the output cells a receptive field of about 29
    pixels, enough to cover a whole eye at 64x64; with 3x3 it is 15.
    """

    image_size: tuple[int, int] = (64, 64)
    channels_per_stage: list[int] = field(default_factory=lambda: [8, 16])
    out_channels: int = 32
    out_spatial: tuple[int, int] = (8, 8)
    kernel: int = 5

    def validate(self) -> None:
        stages = len(self.channels_per_stage) + 1
        h0, w0 = self.image_size
        h, w = self.out_spatial
        if h0 % (2 ** stages) or w0 % (2 ** stages) or (h0 >> stages, w0 >> stages) != (h, w):
            raise ConfigError(f"{stages} stride-2 stages map {h0}x{w0} to "
                              f"{h0 / 2 ** stages:g}x{w0 / 2 ** stages:g}, not {h}x{w}")
        if self.out_channels < 1 or any(c < 1 for c in self.channels_per_stage):
            raise ConfigError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be a positive odd size, got {self.kernel}")

    @property
    def feature_dim(self) -> int:
        return self.out_spatial[0] * self.out_spatial[1] * self.out_channels


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator) -> None:
        cfg.validate()
        self.cfg = cfg
        widths = [3] + list(cfg.channels_per_stage) + [cfg.out_channels]
        self.convs = [Conv2d(a, b, cfg.kernel, rng, stride=2, padding=cfg.kernel // 2)
                      for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, frames: Tensor | np.ndarray) -> Tensor:
        return extract_features(frames, self)


def extract_features(frames: Tensor | np.ndarray, backbone: Backbone) -> Tensor:
    """Map ``(..., h0, w0, 3)`` frames to ``(..., h, w, k)`` feature maps, frame by frame."""
    x = frames if isinstance(frames, Tensor) else Tensor(frames)
    if tuple(x.shape[-3:]) != tuple(backbone.cfg.image_size) + (3,):
        raise ShapeError("extract_features", x.shape, tuple(backbone.cfg.image_size) + (3,),
                         detail="frames do not match the configured image size")
    h = x - 0.5
    for conv in backbone.convs:
        h = F.relu(conv(h))
    return h


def flatten_features(x: np.ndarray | Tensor) -> np.ndarray:
    """Row-major flattening of the trailing ``h x w x k`` block."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return arr.reshape(arr.shape[:-3] + (-1,))


def unflatten_features(v: np.ndarray, spatial: tuple[int, int], channels: int) -> np.ndarray:
    v = np.asarray(v)
    return v.reshape(v.shape[:-1] + tuple(spatial) + (channels,))
