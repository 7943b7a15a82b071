"""End-to-end models assembled from the preprocessing, encoder and fusion pieces."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ContractError
from .fusion import (AttentionGateParams, ForecastHeadParams, forecast_head, fuse,
                     pool_series, predict_class, softmax)
from .nn import MLP, load_arrays, named_parameters, uniform_param
from .preprocess import SeriesBatch, denormalize, embed_patches, instance_normalize, patch, patch_count
from .rwkv import EncoderConfig, encode, init_encoder
from .tabular import embed_tabular


@dataclass
class ModelConfig:
    """Architecture hyper-parameters; defaults follow the published setup."""

    layers: int = 4
    embed_dim: int = 128
    heads: int = 4
    dropout: float = 0.0
    patch_size: int = 24
    stride: int = 24
    tab_dim: int = 31
    head_hidden: int = 64
    n_classes: int = 2
    horizon: int = 48
    n_channels: int = 5
    seq_len: int = 240
    n_tab_features: int = 0
    use_series: bool = True
    use_tabular: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (self.use_series or self.use_tabular):
            raise ContractError("model needs at least one input branch")
        if self.seq_len < self.patch_size:
            raise ContractError(f"seq_len {self.seq_len} shorter than patch size {self.patch_size}")

    @property
    def n_patches(self):
        return patch_count(self.seq_len, self.patch_size, self.stride)

    @property
    def encoder(self):
        return EncoderConfig(self.layers, self.embed_dim, self.heads, self.dropout)

    def to_dict(self):
        return dataclasses.asdict(self)


def _series_tokens(series, projection, config):
    batch = instance_normalize(SeriesBatch.from_array(series))
    windows = patch(batch, config.patch_size, config.stride)
    return batch, embed_patches(windows, projection, config.stride)


class Model:
    """Shared plumbing: named parameters and batched no-grad inference."""

    params = None

    def parameters(self):
        return named_parameters(self.params)

    def state_arrays(self):
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_arrays(self, arrays):
        load_arrays(self.params, arrays)

    def n_parameters(self):
        return sum(p.size for p in self.parameters().values())

    @staticmethod
    def _batches(n, size=256):
        for start in range(0, n, size):
            yield slice(start, min(n, start + size))


@dataclass
class TabulaTimeParams:
    projection: Tensor | None = None
    encoder: object = None
    tab_mlp: MLP | None = None
    gate: AttentionGateParams | None = None
    head: MLP | None = None


class TabulaTime(Model):
    """Tabular embedding + PatchRWKV series features, fused by an attention gate."""

    task = "classification"

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        p = TabulaTimeParams()
        width = 0
        if config.use_series:
            p.projection = uniform_param(rng, config.patch_size, (config.patch_size, config.embed_dim))
            p.encoder = init_encoder(config.encoder, rng)
            width += config.n_channels * config.n_patches
        if config.use_tabular:
            if config.n_tab_features < 1:
                raise ContractError("tabular branch needs n_tab_features >= 1")
            p.tab_mlp = MLP.init(rng, config.n_tab_features, 2 * config.tab_dim, config.tab_dim)
            width += config.tab_dim
        p.gate = AttentionGateParams.init(rng, width)
        p.head = MLP.init(rng, width, config.head_hidden, config.n_classes)
        self.params = p
        self.fused_width = width
        self.last_attention = None

    def fused_input(self, tabular, series, rng=None):
        parts = []
        cfg = self.config
        if cfg.use_tabular:
            parts.append(embed_tabular(tabular, self.params.tab_mlp))
        if cfg.use_series:
            _, tokens = _series_tokens(series, self.params.projection, cfg)
            features = encode(tokens, cfg.encoder, self.params.encoder, rng)
            parts.append(pool_series(features))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def forward(self, tabular, series, rng=None):
        fused, gate = fuse(self.fused_input(tabular, series, rng), self.params.gate, return_gate=True)
        self.last_attention = gate.data
        return predict_class(fused, self.params.head)

    def loss(self, batch, rng=None):
        logits = self.forward(batch.get("tabular"), batch.get("series"), rng)
        return ad.cross_entropy(logits, batch["labels"])

    def predict_proba(self, tabular, series):
        n = len(tabular) if tabular is not None else len(series)
        out = []
        with no_grad():
            for s in self._batches(n):
                tab = None if tabular is None else tabular[s]
                ser = None if series is None else series[s]
                out.append(softmax(self.forward(tab, ser)))
        return np.concatenate(out, axis=0)

    def attention_map(self, tabular, series):
        n = len(tabular) if tabular is not None else len(series)
        maps = []
        with no_grad():
            for s in self._batches(n):
                self.forward(None if tabular is None else tabular[s], None if series is None else series[s])
                maps.append(self.last_attention)
        return np.concatenate(maps, axis=0)

    def predict(self, batch):
        return self.predict_proba(batch.get("tabular"), batch.get("series"))


@dataclass
class ForecasterParams:
    projection: Tensor
    encoder: object
    head: ForecastHeadParams


class PatchRWKVForecaster(Model):
    """Channel-independent PatchRWKV with a flatten-linear forecasting head."""

    task = "forecasting"

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params = ForecasterParams(
            uniform_param(rng, config.patch_size, (config.patch_size, config.embed_dim)),
            init_encoder(config.encoder, rng),
            ForecastHeadParams.init(rng, config.n_patches, config.embed_dim, config.horizon))

    def forward(self, series, rng=None):
        """Normalised-space forecast (B, N, H) plus the normalised input batch."""
        batch, tokens = _series_tokens(series, self.params.projection, self.config)
        features = encode(tokens, self.config.encoder, self.params.encoder, rng)
        return forecast_head(features, self.params.head), batch

    def loss(self, batch, rng=None):
        pred, norm = self.forward(batch["series"], rng)
        target = (batch["target"] - norm.mean[..., None]) / norm.std[..., None]
        return ad.mse_loss(pred, Tensor(target))

    def predict(self, batch):
        series = batch["series"] if isinstance(batch, dict) else batch
        out = []
        with no_grad():
            for s in self._batches(len(series)):
                pred, norm = self.forward(series[s])
                out.append(denormalize(norm, pred))
        return np.concatenate(out, axis=0)


@dataclass
class ClassifierParams:
    projection: Tensor
    encoder: object
    head: MLP


class PatchRWKVClassifier(Model):
    """Series-only classifier: encoder features averaged over channels and patches."""

    task = "classification"

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params = ClassifierParams(
            uniform_param(rng, config.patch_size, (config.patch_size, config.embed_dim)),
            init_encoder(config.encoder, rng),
            MLP.init(rng, config.embed_dim, config.head_hidden, config.n_classes))

    def forward(self, series, rng=None):
        _, tokens = _series_tokens(series, self.params.projection, self.config)
        features = encode(tokens, self.config.encoder, self.params.encoder, rng)
        return predict_class(features.mean(axis=(1, 2)), self.params.head)

    def loss(self, batch, rng=None):
        return ad.cross_entropy(self.forward(batch["series"], rng), batch["labels"])

    def predict(self, batch):
        series = batch["series"] if isinstance(batch, dict) else batch
        out = []
        with no_grad():
            for s in self._batches(len(series)):
                out.append(softmax(self.forward(series[s])))
        return np.concatenate(out, axis=0)


MODELS = {"tabulatime": TabulaTime, "forecaster": PatchRWKVForecaster,
          "classifier": PatchRWKVClassifier}
