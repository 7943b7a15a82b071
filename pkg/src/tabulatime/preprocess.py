"""Instance normalisation, patching and linear patch embedding of hourly series."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, as_tensor, matmul
from .errors import DataError, DimensionError, StateError

EPS = 1e-5


@dataclass
class SeriesBatch:
    """Hourly multivariate series, ``values`` shaped (batch, channels, timesteps).

    ``mean``/``std`` are (batch, channels) and only set once the batch has been
    instance-normalised.
    """

    values: np.ndarray
    channel_names: list
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"series values must be (B, N, L), got {self.values.shape}")
        if len(self.channel_names) != self.values.shape[1]:
            raise DimensionError(
                f"{len(self.channel_names)} channel names for {self.values.shape[1]} channels")

    @property
    def normalized(self):
        return self.mean is not None

    @classmethod
    def from_array(cls, values, channel_names=None):
        values = np.asarray(values, dtype=np.float64)
        if channel_names is None:
            channel_names = [f"ch{i}" for i in range(values.shape[1])]
        return cls(values, list(channel_names))


@dataclass
class PatchTokens:
    tokens: Tensor          # (B, N, T, C)
    patch_size: int
    stride: int
    embed_dim: int


def patch_count(length, patch_size, stride):
    return (length - patch_size) // stride + 1


def instance_normalize(batch, eps=EPS):
    """Standardise every (instance, channel) row over time with population std.

    Degenerate rows are guarded by flooring the std at ``eps``.
    """
    x = batch.values
    if np.isnan(x).any():
        raise DataError("cannot normalise a series containing NaN")
    mean = x.mean(axis=-1)
    std = np.maximum(x.std(axis=-1), eps)
    values = (x - mean[..., None]) / std[..., None]
    return replace(batch, values=values, mean=mean, std=std)


def denormalize(batch, predictions):
    """Map normalised predictions (B, N, ...) back to native units."""
    if batch.mean is None or batch.std is None:
        raise StateError("batch carries no normalisation statistics")
    p = predictions.data if isinstance(predictions, Tensor) else np.asarray(predictions, dtype=np.float64)
    if p.shape[:2] != batch.mean.shape:
        raise DimensionError(f"predictions {p.shape} do not match stats {batch.mean.shape}")
    extra = (None,) * (p.ndim - 2)
    idx = (slice(None), slice(None)) + extra
    return p * batch.std[idx] + batch.mean[idx]


def patch(batch, patch_size, stride):
    """Cut (B, N, L) into windows (B, N, T, P); a short tail is dropped."""
    x = batch.values if isinstance(batch, SeriesBatch) else np.asarray(batch, dtype=np.float64)
    if patch_size < 1 or stride < 1:
        raise DataError(f"patch size and stride must be >= 1, got P={patch_size}, S={stride}")
    length = x.shape[-1]
    if length < patch_size:
        raise DataError(f"series length {length} shorter than patch size {patch_size}")
    windows = np.lib.stride_tricks.sliding_window_view(x, patch_size, axis=-1)
    return np.ascontiguousarray(windows[..., ::stride, :])


def embed_patches(windows, projection, stride=None):
    """Project each length-P window to a C-dim token with a shared matrix (P, C)."""
    projection = as_tensor(projection)
    w = windows if isinstance(windows, Tensor) else Tensor(windows)
    p = w.shape[-1]
    if projection.ndim != 2 or projection.shape[0] != p:
        raise DimensionError(f"projection {projection.shape} cannot embed patches of size {p}")
    tokens = matmul(w, projection)
    return PatchTokens(tokens, p, p if stride is None else stride, projection.shape[1])
