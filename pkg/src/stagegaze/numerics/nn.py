"""Parameter containers and the layers the STAGE modules are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigError(ValueError):
    """A model or layer was configured inconsistently."""


class Parameter(Tensor):
    """Trainable leaf tensor. Its dotted name fixes its checkpoint slot."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None) -> None:
        super().__init__(data, requires_grad=True, name=name)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal module tree: parameters and submodules found by attribute walk."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def assign_names(self) -> None:
        seen: set[str] = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ConfigError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0) -> None:
        self.weight = Parameter(kaiming_uniform(rng, (n_in, n_out), n_in, gain))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1x1(Linear):
    """Pointwise convolution on channels-last maps."""

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1x1(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, gain: float = np.sqrt(2.0)) -> None:
        fan_in = kernel * kernel * c_in
        self.weight = Parameter(kaiming_uniform(rng, (kernel, kernel, c_in, c_out), fan_in, gain))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, n: int, eps: float = 1e-5) -> None:
        self.gamma = Parameter(np.ones(n))
        self.beta = Parameter(np.zeros(n))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5) -> None:
        if groups <= 0 or channels % groups:
            raise ConfigError(f"group_norm: {groups} groups do not divide {channels} channels")
        self.groups = groups
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, p: float) -> None:
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return T.dropout(x, self.p, self.training, rng)


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, -inf above."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate Q/K/V and output projections.

    ``width`` is the internal attention width (heads times per-head size);
    inputs and outputs live in ``d_model``.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, width: int | None = None,
                 dropout: float = 0.0) -> None:
        width = d_model if width is None else width
        if heads <= 0 or width % heads:
            raise ConfigError(f"attention width {width} is not divisible by {heads} heads")
        self.heads = heads
        self.width = width
        self.q_proj = Linear(d_model, width, rng)
        self.k_proj = Linear(d_model, width, rng)
        self.v_proj = Linear(d_model, width, rng)
        self.out_proj = Linear(width, d_model, rng)
        self.attn_drop = Dropout(dropout)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        lead, s = x.shape[:-2], x.shape[-2]
        dh = self.width // self.heads
        x = x.reshape(lead + (s, self.heads, dh))
        nd = x.ndim
        return x.transpose(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    def __call__(self, q_in: Tensor, kv_in: Tensor, causal: bool = False,
                 rng: np.random.Generator | None = None, keep_weights: bool = False) -> Tensor:
        return self.attend(q_in, kv_in, kv_in, causal=causal, rng=rng, keep_weights=keep_weights)

    def attend(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, causal: bool = False,
               rng: np.random.Generator | None = None, keep_weights: bool = False) -> Tensor:
        sq, sk = q_in.shape[-2], k_in.shape[-2]
        if causal and sq != sk:
            raise ConfigError(f"causal attention needs equal query/key lengths, got {sq} and {sk}")
        q = self._split(self.q_proj(q_in))
        k = self._split(self.k_proj(k_in))
        v = self._split(self.v_proj(v_in))
        dh = self.width // self.heads
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
        if causal:
            scores = scores + causal_mask(sq)
        w = T.softmax(scores, axis=-1)
        if keep_weights:
            self.last_weights = w.data.copy()
        w = self.attn_drop(w, rng)
        o = T.matmul(w, v)
        nd = o.ndim
        o = o.transpose(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
        o = o.reshape(o.shape[:-2] + (self.width,))
        return self.out_proj(o)


def multi_head_attention(mha: MultiHeadAttention, Q: Tensor, K: Tensor, V: Tensor, causal: bool = False) -> Tensor:
    """Functional entry point: ``softmax(QK^T/sqrt(d_h))V`` per head, then output projection."""
    return mha.attend(Q, K, V, causal=causal)


class MLP(Module):
    """Two-layer feed-forward block used inside transformer layers."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator, activation: str = "gelu") -> None:
        if activation not in ("gelu", "relu"):
            raise ConfigError(f"unsupported activation {activation!r}")
        self.fc1 = Linear(d, hidden, rng, gain=np.sqrt(2.0))
        self.fc2 = Linear(hidden, d, rng)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        return self.fc2(T.gelu(h) if self.activation == "gelu" else T.relu(h))
