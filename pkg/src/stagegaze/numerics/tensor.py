"""Dense float64 tensor with reverse-mode automatic differentiation.

Every differentiable operation builds a node holding its parents and a
closure that maps the output gradient to parent gradients. ``backward``
walks the graph in reverse topological order. Primitives are coarse
(im2col convolution, fused normalisations, fused softmax) so that a
Python-level graph stays cheap enough to train small video models.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

ARCCOS_EPS = 1e-7

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, *shapes: tuple[int, ...], detail: str = "") -> None:
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{primitive}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.primitive = primitive
        self.shapes = shapes


class NonFiniteError(FloatingPointError):
    """A tensor that must be finite holds NaN or Inf."""


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-d float64 array node in an autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- graph --------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        # gradients are never mutated in place, so the first one can be stored as-is
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Back-propagate from this tensor into every reachable leaf."""
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        interior = [n for n in order if n._backward is not None]
        for n in interior:
            n.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # interior buffers are not kept; leaves keep theirs
        for n in interior:
            if n is not self:
                n.grad = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __pow__(self, p: float):
        return power(self, p)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_over_axes(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def assert_finite(t: Tensor | np.ndarray, what: str = "tensor") -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{what} holds {bad} non-finite value(s)")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), bw)


def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _node(a.data ** p, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def sum_over_axes(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_over_axes(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None

    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _node(out, (a,), bw)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(np.transpose(g, inv))

    return _node(np.transpose(a.data, axes), (a,), bw)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    """Slicing; fancy indices scatter-add on the way back."""
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        a._accumulate(full)

    return _node(np.array(out, copy=True), (a,), bw)


slice_ = getitem


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape, detail=f"axis={axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            b._accumulate(gb)

    return _node(out, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise convolution on channels-last maps: a per-pixel linear map."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError("conv1x1", x.shape, weight.shape)
    return linear(x, weight, bias)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 2-D convolution via im2col.

    ``x`` is ``(..., H, W, C)`` and ``weight`` is ``(kh, kw, C, O)``; leading
    axes are treated as independent images.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim < 3 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    lead = x.shape[:-3]
    H, W, C = x.shape[-3:]
    kh, kw, _, O = weight.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="kernel larger than padded input")
    xs = x.data.reshape((-1, H, W, C))
    N = xs.shape[0]
    if padding:
        xs = np.pad(xs, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = np.empty((N, Ho, Wo, kh, kw, C))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xs[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
    cols = cols.reshape(N * Ho * Wo, kh * kw * C)
    wmat = weight.data.reshape(kh * kw * C, O)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (Ho, Wo, O))

    def bw(g):
        g2 = g.reshape(-1, O)
        if weight.requires_grad:
            weight._accumulate((cols.T @ g2).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(_unbroadcast(g2.sum(axis=0), bias.shape))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(N, Ho, Wo, kh, kw, C)
            gx = np.zeros((N, H + 2 * padding, W + 2 * padding, C))
            for i in range(kh):
                for j in range(kw):
                    gx[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[:, :, :, i, j, :]
            if padding:
                gx = gx[:, padding:-padding, padding:-padding, :]
            x._accumulate(gx.reshape(x.shape))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: a._accumulate(g * out))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def sin(a: Tensor) -> Tensor:
    a = as_tensor(a)
    c = np.cos(a.data)
    return _node(np.sin(a.data), (a,), lambda g: a._accumulate(g * c))


def cos(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = np.sin(a.data)
    return _node(np.cos(a.data), (a,), lambda g: a._accumulate(-g * s))


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: a._accumulate(g * 0.5 / out))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # split by sign to avoid overflow in exp
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: a._accumulate(g * mask))


SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def selu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg = SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    out = SELU_SCALE * np.where(x > 0, x, neg)
    deriv = SELU_SCALE * np.where(x > 0, 1.0, neg + SELU_ALPHA)
    return _node(out, (a,), lambda g: a._accumulate(g * deriv))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    c = np.sqrt(2.0 / np.pi)
    x2 = x * x
    t = np.tanh(c * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)
    deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x2)
    return _node(out, (a,), lambda g: a._accumulate(g * deriv))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax over ``axis``; ``-inf`` entries receive exactly zero weight."""
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (a,), bw)


def softmax_last_axis(a: Tensor) -> Tensor:
    return softmax(a, axis=-1)


def arccos_clamped(a: Tensor, eps: float = ARCCOS_EPS) -> Tensor:
    """arccos after clamping the argument into ``[-1 + eps, 1 - eps]``."""
    a = as_tensor(a)
    c = np.clip(a.data, -1.0 + eps, 1.0 - eps)
    inside = (a.data > -1.0 + eps) & (a.data < 1.0 - eps)
    deriv = np.where(inside, -1.0 / np.sqrt(1.0 - c * c), 0.0)
    return _node(np.arccos(c), (a,), lambda g: a._accumulate(g * deriv))


def l2_norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        a._accumulate(gk * a.data / safe)

    return _node(out if keepdims else np.squeeze(out, axis=axis), (a,), bw)


# ---------------------------------------------------------------------------
# normalisation and regularisation
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    n = x.shape[-1]
    if gamma is not None and gamma.shape != (n,):
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def bw(g):
        gh = g * gamma.data if gamma is not None else g
        if x.requires_grad:
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)
        if gamma is not None and gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, n).sum(axis=0))
        if beta is not None and beta.requires_grad:
            beta._accumulate(g.reshape(-1, n).sum(axis=0))

    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    return _node(out, parents, bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Group normalisation of channels-last maps ``(..., H, W, C)``.

    Statistics are taken per leading index over the spatial extent and the
    channels of each group.
    """
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError("group_norm", x.shape, detail="needs (..., H, W, C)")
    H, W, C = x.shape[-3:]
    if groups <= 0 or C % groups:
        raise ShapeError("group_norm", x.shape, detail=f"{groups} groups do not divide {C} channels")
    lead = x.shape[:-3]
    cpg = C // groups
    xr = x.data.reshape(lead + (H, W, groups, cpg))
    axes = (-4, -3, -1)
    mu = xr.mean(axis=axes, keepdims=True)
    xc = xr - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(x.shape)
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def bw(g):
        gh = g * gamma.data if gamma is not None else g
        if x.requires_grad:
            ghr = gh.reshape(xr.shape)
            xhr = xhat.reshape(xr.shape)
            gx = rstd * (ghr - ghr.mean(axis=axes, keepdims=True)
                         - xhr * (ghr * xhr).mean(axis=axes, keepdims=True))
            x._accumulate(gx.reshape(x.shape))
        if gamma is not None and gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, C).sum(axis=0))
        if beta is not None and beta.requires_grad:
            beta._accumulate(g.reshape(-1, C).sum(axis=0))

    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    return _node(out, parents, bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales kept units by ``1/(1-p)`` so eval is identity."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep) / keep
    return _node(x.data * mask, (x,), lambda g: x._accumulate(g * mask))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
