from . import tensor as F
from .gradcheck import GradCheckReport, finite_diff_check
from .nn import (ConfigError, Conv1x1, Conv2d, Dropout, GroupNorm, LayerNorm, Linear, MLP, Module,
                 MultiHeadAttention, Parameter, causal_mask, multi_head_attention)
from .optim import Adam, SgdMomentum, clip_grad_norm, cosine_anneal_lr, sgd_step
from .tensor import NonFiniteError, ShapeError, Tensor, assert_finite, no_grad

__all__ = [
    "F", "Tensor", "Parameter", "Module", "Linear", "Conv1x1", "Conv2d", "LayerNorm", "GroupNorm",
    "Dropout", "MLP", "MultiHeadAttention", "multi_head_attention", "causal_mask", "SgdMomentum", "Adam", "clip_grad_norm",
    "sgd_step", "cosine_anneal_lr", "finite_diff_check", "GradCheckReport", "ShapeError", "NonFiniteError",
    "ConfigError", "assert_finite", "no_grad",
]
