"""Spatial attention modules over consecutive feature-map pairs.

Every variant maps a pair ``(X_prev, X_cur)`` of ``h x w x k`` maps to a
vector ``z = [v_prev; v_cur - v_prev; v_cur]`` (Concat-Residual instead
returns ``[pool(X_cur); pool(X_cur - X_prev)]``). Inputs may carry any
number of leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (F, ConfigError, Conv1x1, Dropout, GroupNorm, LayerNorm, MLP, Module, MultiHeadAttention,
                       Parameter, ShapeError, Tensor)

VARIANTS = ("dual", "cross", "hybrid", "hybrid_dagger", "concat_residual")
MAP_VARIANTS = ("dual", "hybrid")


@dataclass
class SamConfig:
    variant: str = "hybrid"
    d: int = 64
    attn_heads: int = 4
    attn_head_dim: int = 16
    attn_layers: int = 2
    attn_dropout: float = 0.0
    mlp_ratio: int = 2
    dual_hidden: int = 32
    dropout_p: float = 0.5
    groups: int = 8
    in_channels: int | None = None

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown SAM variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant in ("cross", "hybrid", "hybrid_dagger"):
            if self.attn_heads < 1 or self.attn_head_dim < 1:
                raise ConfigError("attention heads and head width must be positive")
            if self.attn_layers < 1:
                raise ConfigError("attn_layers must be >= 1")
        if self.variant in MAP_VARIANTS and self.dual_hidden % self.groups:
            raise ConfigError(f"{self.groups} groups do not divide dual_hidden={self.dual_hidden}")

    def output_width(self, k: int) -> int:
        if self.variant == "dual":
            return 3 * k
        if self.variant == "concat_residual":
            return 2 * k
        return 3 * self.d


@dataclass
class SamOutput:
    z: Tensor  # (..., n, width)
    attention_maps: np.ndarray | None = None  # (..., n, 2, h, w)


def _spatial_sum(x: Tensor) -> Tensor:
    return x.sum(axis=(-3, -2))


def _triple(v_prev: Tensor, v_cur: Tensor) -> Tensor:
    return F.concat([v_prev, v_cur - v_prev, v_cur], axis=-1)


class AttentionPool(Module):
    """Dual-SAM pooling: a sigmoid map per frame from ``[X; X_cur - X_prev]``.

    conv1x1 -> group norm -> dropout -> relu -> conv1x1 -> sigmoid; the two
    frames share weights.
    """

    def __init__(self, channels: int, hidden: int, groups: int, dropout_p: float, rng: np.random.Generator) -> None:
        self.conv1 = Conv1x1(2 * channels, hidden, rng, gain=np.sqrt(2.0))
        self.norm = GroupNorm(groups, hidden)
        self.drop = Dropout(dropout_p)
        self.conv2 = Conv1x1(hidden, 1, rng)
        self.force_ones = False

    def attention(self, x: Tensor, diff: Tensor, rng: np.random.Generator | None) -> Tensor:
        h = self.conv1(F.concat([x, diff], axis=-1))
        h = F.relu(self.drop(self.norm(h), rng))
        return F.sigmoid(self.conv2(h))

    def __call__(self, x_prev: Tensor, x_cur: Tensor, rng: np.random.Generator | None = None):
        diff = x_cur - x_prev
        if self.force_ones:
            a_prev = Tensor(np.ones(x_prev.shape[:-1] + (1,)))
            a_cur = Tensor(np.ones(x_cur.shape[:-1] + (1,)))
        else:
            a_prev = self.attention(x_prev, diff, rng)
            a_cur = self.attention(x_cur, diff, rng)
        v_prev = _spatial_sum(a_prev * x_prev)
        v_cur = _spatial_sum(a_cur * x_cur)
        return v_prev, v_cur, a_prev, a_cur


class CrossAttentionLayer(Module):
    """Pre-norm cross-attention block: queries attend to a fixed memory."""

    def __init__(self, d: int, heads: int, head_dim: int, mlp_ratio: int, dropout: float,
                 rng: np.random.Generator) -> None:
        self.norm_q = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, width=heads * head_dim, dropout=dropout)
        self.norm_mlp = LayerNorm(d)
        self.mlp = MLP(d, mlp_ratio * d, rng, activation="relu")

    def __call__(self, q: Tensor, memory: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        q = q + self.attn(self.norm_q(q), memory, rng=rng)
        return q + self.mlp(self.norm_mlp(q))


class _Projected(Module):
    """Shared conv1x1 projection to ``d`` channels plus learned 2-D position embedding."""

    def __init__(self, k: int, d: int, spatial: tuple[int, int], rng: np.random.Generator) -> None:
        self.proj = Conv1x1(k, d, rng)
        self.pos2d = Parameter(rng.normal(0.0, 0.02, size=spatial + (d,)))

    def project(self, x: Tensor) -> Tensor:
        if tuple(x.shape[-3:-1]) != self.pos2d.shape[:2]:
            raise ShapeError("sam.project", x.shape, self.pos2d.shape)
        p = self.proj(x) + self.pos2d
        return p.reshape(p.shape[:-3] + (-1, p.shape[-1]))


class DualSAM(Module):
    variant = "dual"

    def __init__(self, cfg: SamConfig, k: int, spatial: tuple[int, int], rng: np.random.Generator) -> None:
        self.pool = AttentionPool(k, cfg.dual_hidden, cfg.groups, cfg.dropout_p, rng)

    def pairs(self, x_prev: Tensor, x_cur: Tensor, rng=None, keep_maps: bool = False):
        v_prev, v_cur, a_prev, a_cur = self.pool(x_prev, x_cur, rng)
        maps = np.stack([a_prev.data[..., 0], a_cur.data[..., 0]], axis=-3) if keep_maps else None
        return _triple(v_prev, v_cur), maps


class CrossSAM(_Projected):
    variant = "cross"

    def __init__(self, cfg: SamConfig, k: int, spatial: tuple[int, int], rng: np.random.Generator) -> None:
        super().__init__(k, cfg.d, spatial, rng)
        self.layers = [CrossAttentionLayer(cfg.d, cfg.attn_heads, cfg.attn_head_dim, cfg.mlp_ratio,
                                           cfg.attn_dropout, rng) for _ in range(cfg.attn_layers)]

    def pairs(self, x_prev: Tensor, x_cur: Tensor, rng=None, keep_maps: bool = False):
        # streams on axis -3: index 0 is the previous frame, 1 the current one
        s = F.stack([self.project(x_prev), self.project(x_cur)], axis=-3)
        for layer in self.layers:
            other = F.concat([s[..., 1:2, :, :], s[..., 0:1, :, :]], axis=-3)
            s = layer(s, other, rng)
        v = s.sum(axis=-2)
        return _triple(v[..., 0, :], v[..., 1, :]), None


class HybridSAM(_Projected):
    """Difference-keyed cross-attention, then Dual-SAM pooling.

    With ``dual_pool=False`` this is the variant that sum-pools the
    attended tokens instead.
    """

    def __init__(self, cfg: SamConfig, k: int, spatial: tuple[int, int], rng: np.random.Generator,
                 dual_pool: bool = True) -> None:
        super().__init__(k, cfg.d, spatial, rng)
        self.spatial = tuple(spatial)
        self.layers = [CrossAttentionLayer(cfg.d, cfg.attn_heads, cfg.attn_head_dim, cfg.mlp_ratio,
                                           cfg.attn_dropout, rng) for _ in range(cfg.attn_layers)]
        self.pool = AttentionPool(cfg.d, cfg.dual_hidden, cfg.groups, cfg.dropout_p, rng) if dual_pool else None
        self.variant = "hybrid" if dual_pool else "hybrid_dagger"

    def attended(self, x_prev: Tensor, x_cur: Tensor, rng=None) -> Tensor:
        p_prev = self.project(x_prev)
        p_cur = self.project(x_cur)
        diff = p_cur - p_prev
        s = F.stack([p_prev, p_cur], axis=-3)
        memory = diff.reshape(diff.shape[:-2] + (1,) + diff.shape[-2:])
        for layer in self.layers:
            s = layer(s, memory, rng)
        return s

    def pairs(self, x_prev: Tensor, x_cur: Tensor, rng=None, keep_maps: bool = False):
        s = self.attended(x_prev, x_cur, rng)
        if self.pool is None:
            v = s.sum(axis=-2)
            return _triple(v[..., 0, :], v[..., 1, :]), None
        h, w = self.spatial
        grid = s.reshape(s.shape[:-2] + (h, w, s.shape[-1]))
        v_prev, v_cur, a_prev, a_cur = self.pool(grid[..., 0, :, :, :], grid[..., 1, :, :, :], rng)
        maps = np.stack([a_prev.data[..., 0], a_cur.data[..., 0]], axis=-3) if keep_maps else None
        return _triple(v_prev, v_cur), maps


class ConcatResidual(Module):
    """Baseline without attention: ``[sum_hw X_cur; sum_hw (X_cur - X_prev)]``."""

    variant = "concat_residual"

    def __init__(self, cfg: SamConfig | None = None, k: int = 0, spatial=None, rng=None) -> None:
        pass

    def pairs(self, x_prev: Tensor, x_cur: Tensor, rng=None, keep_maps: bool = False):
        return F.concat([_spatial_sum(x_cur), _spatial_sum(x_cur - x_prev)], axis=-1), None


def build_sam(cfg: SamConfig, k: int, spatial: tuple[int, int], rng: np.random.Generator) -> Module:
    cfg.validate()
    if cfg.in_channels is not None and cfg.in_channels != k:
        raise ConfigError(f"SAM expects {cfg.in_channels} input channels but the backbone emits {k}")
    if cfg.variant == "dual":
        return DualSAM(cfg, k, spatial, rng)
    if cfg.variant == "cross":
        return CrossSAM(cfg, k, spatial, rng)
    if cfg.variant == "hybrid":
        return HybridSAM(cfg, k, spatial, rng, dual_pool=True)
    if cfg.variant == "hybrid_dagger":
        return HybridSAM(cfg, k, spatial, rng, dual_pool=False)
    return ConcatResidual(cfg, k, spatial, rng)


def _check_pair(x_prev: Tensor, x_cur: Tensor) -> None:
    if x_prev.shape != x_cur.shape or x_prev.ndim < 3:
        raise ShapeError("sam", x_prev.shape, x_cur.shape)


def dual_sam(x_prev: Tensor, x_cur: Tensor, module: DualSAM, rng=None):
    _check_pair(x_prev, x_cur)
    return module.pairs(x_prev, x_cur, rng)[0]


def cross_sam(x_prev: Tensor, x_cur: Tensor, module: CrossSAM, rng=None):
    _check_pair(x_prev, x_cur)
    return module.pairs(x_prev, x_cur, rng)[0]


def hybrid_sam(x_prev: Tensor, x_cur: Tensor, module: HybridSAM, rng=None):
    """Returns ``(z, A_prev, A_cur)`` with maps of shape ``(..., h, w, 1)``."""
    _check_pair(x_prev, x_cur)
    z, maps = module.pairs(x_prev, x_cur, rng, keep_maps=True)
    return z, maps[..., 0, :, :, None], maps[..., 1, :, :, None]


def hybrid_sam_dagger(x_prev: Tensor, x_cur: Tensor, module: HybridSAM, rng=None):
    _check_pair(x_prev, x_cur)
    return module.pairs(x_prev, x_cur, rng)[0]


def concat_residual(x_prev: Tensor, x_cur: Tensor) -> Tensor:
    _check_pair(x_prev, x_cur)
    return ConcatResidual().pairs(x_prev, x_cur)[0]


def sam_sequence(X: Tensor, module: Module, rng: np.random.Generator | None = None,
                 keep_maps: bool = False) -> SamOutput:
    """Apply one shared SAM to every consecutive pair of ``X`` (``(..., n, h, w, k)``).

    The first step uses the pair ``(X_1, X_1)`` so there is one embedding per frame.
    """
    if X.ndim < 4:
        raise ShapeError("sam_sequence", X.shape, detail="expected (..., n, h, w, k)")
    n = X.shape[-4]
    if n < 2:
        raise ValueError(f"sam_sequence needs n >= 2 frames, got {n}")
    lead = X.ndim - 4
    first = X[(slice(None),) * lead + (slice(0, 1),)]
    prev = F.concat([first, X[(slice(None),) * lead + (slice(0, n - 1),)]], axis=lead)
    z, maps = module.pairs(prev, X, rng, keep_maps=keep_maps)
    return SamOutput(z, maps)
