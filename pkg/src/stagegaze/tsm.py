"""Causal temporal sequence models, the gaze prediction layer, and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import F, ConfigError, LayerNorm, Linear, MLP, Module, MultiHeadAttention, Parameter, Tensor

TSM_VARIANTS = ("lstm", "transformer")


@dataclass
class TsmConfig:
    variant: str = "lstm"
    d_t: int = 64
    layers: int | None = None  # None: 1 for the LSTM, 2 for the transformer
    heads: int = 2
    max_seq_len: int = 32
    mlp_ratio: int = 4
    input_norm: bool = True
    d_in: int | None = None

    def validate(self) -> None:
        if self.variant not in TSM_VARIANTS:
            raise ConfigError(f"unknown TSM variant {self.variant!r}; expected one of {TSM_VARIANTS}")
        if self.d_t < 1 or self.depth < 1:
            raise ConfigError("d_t and layers must be positive")
        if self.variant == "transformer":
            if self.heads < 1 or self.d_t % self.heads:
                raise ConfigError(f"d_t={self.d_t} is not divisible by {self.heads} heads")
            if self.max_seq_len < 1:
                raise ConfigError("max_seq_len must be positive")

    @property
    def depth(self) -> int:
        if self.layers is not None:
            return self.layers
        return 2 if self.variant == "transformer" else 1


@dataclass
class LossConfig:
    lam: float = 0.0

    def validate(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"loss lambda must be finite and >= 0, got {self.lam}")


# ---------------------------------------------------------------------------
# recurrent TSM
# ---------------------------------------------------------------------------

class LSTM(Module):
    """Single unidirectional LSTM layer, gates ordered (input, forget, cell, output).

    Initial hidden and cell states are zero.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator) -> None:
        self.d_hidden = d_hidden
        self.w_x = Linear(d_in, 4 * d_hidden, rng)
        self.w_h = Linear(d_hidden, 4 * d_hidden, rng, bias=False)

    def __call__(self, z: Tensor) -> Tensor:
        """``z``: ``(..., n, d_in)`` -> ``(..., n, d_hidden)``."""
        if z.ndim == 2:
            return self(z.reshape((1,) + z.shape))[0]
        n = z.shape[-2]
        lead = z.shape[:-2]
        dh = self.d_hidden
        xs = self.w_x(z)
        h = Tensor(np.zeros(lead + (dh,)))
        c = Tensor(np.zeros(lead + (dh,)))
        outs = []
        for t in range(n):
            gates = xs[..., t, :] + self.w_h(h)
            i = F.sigmoid(gates[..., 0:dh])
            f = F.sigmoid(gates[..., dh:2 * dh])
            g = F.tanh(gates[..., 2 * dh:3 * dh])
            o = F.sigmoid(gates[..., 3 * dh:4 * dh])
            c = f * c + i * g
            h = o * F.tanh(c)
            outs.append(h)
        return F.stack(outs, axis=-2)


class LstmTSM(Module):
    def __init__(self, cfg: TsmConfig, d_in: int, rng: np.random.Generator) -> None:
        self.in_norm = LayerNorm(d_in) if cfg.input_norm else None
        self.cells = [LSTM(d_in if i == 0 else cfg.d_t, cfg.d_t, rng) for i in range(cfg.depth)]

    def __call__(self, z: Tensor) -> Tensor:
        e = self.in_norm(z) if self.in_norm is not None else z
        for cell in self.cells:
            e = cell(e)
        return e


def tsm_lstm(z: Tensor, module: LstmTSM) -> Tensor:
    return module(z)


# ---------------------------------------------------------------------------
# causal transformer TSM
# ---------------------------------------------------------------------------

class TransformerBlock(Module):
    """Pre-norm block: LN -> masked MHA -> residual, LN -> MLP -> residual."""

    def __init__(self, d: int, heads: int, mlp_ratio: int, rng: np.random.Generator) -> None:
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(d, mlp_ratio * d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x), self.ln1(x), causal=True)
        return x + self.mlp(self.ln2(x))


class TransformerTSM(Module):
    def __init__(self, cfg: TsmConfig, d_in: int, rng: np.random.Generator) -> None:
        self.max_seq_len = cfg.max_seq_len
        self.in_norm = LayerNorm(d_in) if cfg.input_norm else None
        self.proj = Linear(d_in, cfg.d_t, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.max_seq_len, cfg.d_t)))
        self.blocks = [TransformerBlock(cfg.d_t, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.ln_f = LayerNorm(cfg.d_t)
        self.zero_positions = False

    def __call__(self, z: Tensor) -> Tensor:
        n = z.shape[-2]
        if n > self.max_seq_len:
            raise ValueError(f"sequence length {n} exceeds max_seq_len={self.max_seq_len}")
        x = self.in_norm(z) if self.in_norm is not None else z
        x = self.proj(x)
        if not self.zero_positions:
            x = x + self.pos[0:n]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)


def tsm_transformer(z: Tensor, module: TransformerTSM) -> Tensor:
    return module(z)


def build_tsm(cfg: TsmConfig, d_in: int, rng: np.random.Generator) -> Module:
    cfg.validate()
    if cfg.d_in is not None and cfg.d_in != d_in:
        raise ConfigError(f"TSM expects input width {cfg.d_in} but the SAM emits {d_in}")
    if cfg.variant == "lstm":
        return LstmTSM(cfg, d_in, rng)
    return TransformerTSM(cfg, d_in, rng)


# ---------------------------------------------------------------------------
# gaze prediction layer
# ---------------------------------------------------------------------------

class GazePredictionLayer(Module):
    """Timestamp-shared MLP: FC(d_t, d_t) + SELU, FC(d_t, 2); optional parallel PoG head."""

    def __init__(self, d_t: int, rng: np.random.Generator, with_pog: bool = False) -> None:
        self.fc1 = Linear(d_t, d_t, rng)
        self.fc2 = Linear(d_t, 2, rng)
        self.pog_head = Linear(d_t, 2, rng) if with_pog else None

    def __call__(self, e: Tensor) -> tuple[Tensor, Tensor | None]:
        gaze = self.fc2(F.selu(self.fc1(e)))
        pog = self.pog_head(e) if self.pog_head is not None else None
        return gaze, pog


def gaze_prediction_layer(e: Tensor, module: GazePredictionLayer):
    return module(e)


# ---------------------------------------------------------------------------
# gaze geometry and loss
# ---------------------------------------------------------------------------

def pitch_yaw_to_vec(angles) -> Tensor | np.ndarray:
    """(pitch, yaw) -> unit vector ``(-cos p sin y, -sin p, -cos p cos y)``.

    Accepts numpy arrays (returns numpy) or Tensors (differentiable).
    """
    if isinstance(angles, Tensor):
        p = angles[..., 0:1]
        y = angles[..., 1:2]
        cp, sp = F.cos(p), F.sin(p)
        cy, sy = F.cos(y), F.sin(y)
        return F.concat([-(cp * sy), -sp, -(cp * cy)], axis=-1)
    a = np.asarray(angles, dtype=np.float64)
    p, y = a[..., 0], a[..., 1]
    return np.stack([-np.cos(p) * np.sin(y), -np.sin(p), -np.cos(p) * np.cos(y)], axis=-1)


def vec_to_pitch_yaw(v: np.ndarray) -> np.ndarray:
    """Analytic inverse of :func:`pitch_yaw_to_vec` for unit vectors."""
    v = np.asarray(v, dtype=np.float64)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    pitch = np.arcsin(np.clip(-v[..., 1], -1.0, 1.0))
    yaw = np.arctan2(-v[..., 0], -v[..., 2])
    return np.stack([pitch, yaw], axis=-1)


def angular_error_deg(g, g_hat) -> np.ndarray | Tensor:
    """Angle between gaze vectors in degrees (last axis holds the 3 components).

    Tensor inputs take the differentiable route through ``arccos_clamped``;
    numpy inputs are evaluated exactly.
    """
    if isinstance(g, Tensor) or isinstance(g_hat, Tensor):
        g, g_hat = F.as_tensor(g), F.as_tensor(g_hat)
        if np.any(np.linalg.norm(g.data, axis=-1) == 0) or np.any(np.linalg.norm(g_hat.data, axis=-1) == 0):
            raise ValueError("angular error is undefined for zero-norm vectors")
        cos = (g * g_hat).sum(axis=-1) / (F.l2_norm(g, axis=-1) * F.l2_norm(g_hat, axis=-1))
        return F.arccos_clamped(cos) * (180.0 / np.pi)
    g = np.asarray(g, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    ng = np.linalg.norm(g, axis=-1)
    nh = np.linalg.norm(g_hat, axis=-1)
    if np.any(ng == 0) or np.any(nh == 0):
        raise ValueError("angular error is undefined for zero-norm vectors")
    # metric path: clip only to the arccos domain so identical vectors give exactly 0
    cos = (g * g_hat).sum(axis=-1) / (ng * nh)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def angular_error_angles_deg(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Per-frame angular error between (pitch, yaw) arrays, in degrees."""
    return angular_error_deg(pitch_yaw_to_vec(true), pitch_yaw_to_vec(pred))


def stage_loss(pred_gaze: Tensor, true_gaze, cfg: LossConfig, pred_pog: Tensor | None = None,
               true_pog=None) -> Tensor:
    """Mean angular error (degrees) over batch and frames plus ``lam`` times mean PoG distance."""
    cfg.validate()
    true_gaze = np.asarray(true_gaze, dtype=np.float64)
    if pred_gaze.shape != true_gaze.shape or pred_gaze.shape[-1] != 2:
        raise ValueError(f"gaze shapes differ: {pred_gaze.shape} vs {true_gaze.shape}")
    ang = angular_error_deg(pitch_yaw_to_vec(Tensor(true_gaze)), pitch_yaw_to_vec(pred_gaze))
    loss = ang.mean()
    if cfg.lam > 0:
        if pred_pog is None or true_pog is None:
            raise ValueError("lambda > 0 requires both predicted and true PoG")
        resid = pred_pog - np.asarray(true_pog, dtype=np.float64)
        loss = loss + cfg.lam * F.l2_norm(resid, axis=-1).mean()
    return loss
