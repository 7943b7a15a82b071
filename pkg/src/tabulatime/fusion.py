"""Pooling, sigmoid attention-gate fusion and prediction heads."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ContractError, DimensionError
from .nn import uniform_param, zeros_param


@dataclass
class AttentionGateParams:
    w1: Tensor   # (F, bottleneck)
    w2: Tensor   # (bottleneck, F)

    @classmethod
    def init(cls, rng, width, bottleneck=None):
        bottleneck = bottleneck or gate_bottleneck(width)
        if bottleneck < 1:
            raise ContractError("gate bottleneck must be >= 1")
        return cls(uniform_param(rng, width, (width, bottleneck)),
                   uniform_param(rng, bottleneck, (bottleneck, width)))


@dataclass
class ForecastHeadParams:
    weight: Tensor   # (T*C, H)
    bias: Tensor     # (H,)

    @classmethod
    def init(cls, rng, n_patches, embed_dim, horizon):
        if horizon < 1:
            raise ContractError(f"horizon must be >= 1, got {horizon}")
        fan_in = n_patches * embed_dim
        return cls(uniform_param(rng, fan_in, (fan_in, horizon)), zeros_param((horizon,)))


def gate_bottleneck(width):
    return max(1, math.ceil(width / 4))


def pool_series(features):
    """Average encoder features over the embedding axis: (B, N, T, C) -> (B, N*T)."""
    features = as_tensor(features)
    if features.ndim != 4:
        raise DimensionError(f"expected (B, N, T, C) features, got {features.shape}")
    b, n, t, _ = features.shape
    return features.mean(axis=-1).reshape(b, n * t)


def fuse(x, params, return_gate=False):
    """Rescale every input coordinate by sigmoid(relu(x W1) W2).

    With ``return_gate`` the attention map is returned alongside.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[0] or params.w2.shape[1] != x.shape[1]:
        raise DimensionError(f"fusion input {x.shape} vs gate {params.w1.shape}/{params.w2.shape}")
    gate = ad.sigmoid(ad.matmul(ad.relu(ad.matmul(x, params.w1)), params.w2))
    out = gate * x
    return (out, gate) if return_gate else out


def predict_class(x, head):
    """Logits from the two-layer classification head."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != head.w1.shape[0]:
        raise DimensionError(f"head expects width {head.w1.shape[0]}, got {x.shape}")
    if head.w2.shape[1] < 2:
        raise ContractError("classification needs at least two classes")
    return head(x)


def softmax(logits):
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forecast_head(features, params):
    """Flatten each channel's (T, C) features and map them to H future values."""
    features = as_tensor(features)
    b, n, t, c = features.shape
    if params.weight.shape[0] != t * c:
        raise DimensionError(f"head expects {params.weight.shape[0]} inputs, features give {t * c}")
    return ad.matmul(features.reshape(b, n, t * c), params.weight) + params.bias
