"""Optimisers and learning-rate schedules."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


def _label(p: Tensor, i: int) -> str:
    return p.name or f"param[{i}]"


class SgdMomentum:
    """Classical (heavy-ball) momentum: ``v <- m*v + g``, ``p <- p - lr*v``."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9) -> None:
        if lr < 0:
            raise ValueError(f"lr must be non-negative, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in {_label(p, i)}; step aborted")
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else 0.0
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"lr": self.lr, "momentum": self.momentum, "velocity": [v.copy() for v in self.velocity]}

    def load_state_dict(self, state: dict) -> None:
        vel = state["velocity"]
        if len(vel) != len(self.params):
            raise ValueError("optimizer state does not match parameter count")
        for i, (v, p) in enumerate(zip(vel, self.params)):
            if np.shape(v) != p.shape:
                raise ValueError(f"velocity shape mismatch for {_label(p, i)}")
        self.velocity = [np.array(v, dtype=np.float64) for v in vel]
        self.lr = float(state["lr"])
        self.momentum = float(state["momentum"])


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], opt: SgdMomentum) -> None:
    """Apply one momentum step with explicitly supplied gradients."""
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    opt.step()


class Adam:
    """Adam with bias correction (GP hyperparameters; optional for training)."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8) -> None:
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def cosine_anneal_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from ``lr0`` at step 0 to zero at ``total_steps``."""
    if total_steps <= 0:
        return lr0
    step = min(max(step, 0), total_steps)
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if not math.isfinite(total):
        raise NonFiniteError(f"gradient norm is {total}")
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
