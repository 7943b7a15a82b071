"""PatchRWKV encoder: stacked residual time-mixing / channel-mixing blocks.

Tokens are row vectors, so every weight is stored as ``(in, out)`` and applied
as ``x @ W``. All ops act on the last two axes ``(T, C)`` and broadcast over
any leading (batch, channel) axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, make_node
from .errors import ContractError, DimensionError
from .nn import full_param, uniform_param, zeros_param


@dataclass
class EncoderConfig:
    layers: int = 4
    embed_dim: int = 128
    heads: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.layers < 1:
            raise ContractError("encoder needs at least one layer")
        if self.embed_dim % self.heads:
            raise ContractError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self):
        return self.embed_dim // self.heads


@dataclass
class TimeMixParams:
    """Weights of one time-mixing sub-block.

    ``mu_*`` hold logits of the interpolation weights and ``w_raw`` the logits
    of the per-head decay; both pass through a sigmoid before use.
    """

    w_r: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    mu_r: Tensor
    mu_k: Tensor
    mu_v: Tensor
    w_raw: Tensor
    u: Tensor

    @property
    def heads(self):
        return self.w_raw.shape[0]

    def decay(self):
        return ad.sigmoid(self.w_raw)


@dataclass
class ChannelMixParams:
    w_k: Tensor
    w_r: Tensor
    w_v: Tensor
    mu_k: Tensor
    mu_r: Tensor


@dataclass
class Block:
    ln1_gain: Tensor
    ln1_bias: Tensor
    time: TimeMixParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    channel: ChannelMixParams


@dataclass
class EncoderParams:
    blocks: list = field(default_factory=list)


def _decay_logits(heads, head_dim, low=0.3, high=0.95):
    w = np.geomspace(low, high, head_dim) if head_dim > 1 else np.array([np.sqrt(low * high)])
    return np.tile(np.log(w / (1.0 - w)), (heads, 1))


def init_encoder(config, rng):
    c, h, d = config.embed_dim, config.heads, config.head_dim
    blocks = []
    for _ in range(config.layers):
        time = TimeMixParams(
            w_r=uniform_param(rng, c, (c, c)),
            w_k=uniform_param(rng, c, (c, c)),
            w_v=uniform_param(rng, c, (c, c)),
            w_o=zeros_param((c, c)),
            mu_r=zeros_param((c,)), mu_k=zeros_param((c,)), mu_v=zeros_param((c,)),
            w_raw=Tensor(_decay_logits(h, d), requires_grad=True),
            u=full_param((h, d), 0.5),
        )
        channel = ChannelMixParams(
            w_k=uniform_param(rng, c, (c, c)),
            w_r=uniform_param(rng, c, (c, c)),
            w_v=zeros_param((c, c)),
            mu_k=zeros_param((c,)), mu_r=zeros_param((c,)),
        )
        blocks.append(Block(full_param((c,), 1.0), zeros_param((c,)), time,
                            full_param((c,), 1.0), zeros_param((c,)), channel))
    return EncoderParams(blocks)


def time_shift(x):
    """Row t of the result is row t-1 of ``x``; row 0 is zero."""
    return ad.shift(x, 1, axis=-2)


def split_heads(x, heads):
    """(..., T, C) -> (..., h, T, d)."""
    *lead, t, c = x.shape
    if c % heads:
        raise DimensionError(f"width {c} not divisible by {heads} heads")
    return x.reshape(*lead, t, heads, c // heads).swapaxes(-2, -3)


def merge_heads(x):
    """(..., h, T, d) -> (..., T, C)."""
    *lead, h, t, d = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, t, h * d)


def rkv_projections(x, shifted, params):
    """Receptance, key and value of interpolated inputs, split per head (..., h, T, d)."""
    x, shifted = as_tensor(x), as_tensor(shifted)
    if x.shape != shifted.shape:
        raise DimensionError(f"input {x.shape} and shifted {shifted.shape} differ")
    out = []
    for w, mu in ((params.w_r, params.mu_r), (params.w_k, params.mu_k), (params.w_v, params.mu_v)):
        mixed = ad.lerp(ad.sigmoid(mu), x, shifted)
        out.append(split_heads(ad.matmul(mixed, w), params.heads))
    return tuple(out)


def _arrays(k, v, w, u):
    k = k.data if isinstance(k, Tensor) else np.asarray(k, dtype=np.float64)
    v = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    w = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    u = u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float64)
    if k.shape != v.shape or k.ndim < 3:
        raise DimensionError(f"keys {k.shape} and values {v.shape} must match as (..., h, T, d)")
    hd = (k.shape[-3], k.shape[-1])
    if w.shape != hd or u.shape != hd:
        raise DimensionError(f"decay {w.shape} / bonus {u.shape} must be (h, d) = {hd}")
    if not (np.all(w > 0.0) and np.all(w < 1.0)):
        raise ContractError("decay must lie strictly inside (0, 1)")
    return k, v, w, u


def wkv_direct(k, v, w, u):
    """Literal O(T^2) evaluation of the decayed key-value sum (reference oracle).

    Returns a plain array (..., h, T, d, d); no gradient is recorded.
    """
    k, v, w, u = _arrays(k, v, w, u)
    steps = k.shape[-2]
    out = np.zeros(k.shape + (k.shape[-1],))
    for t in range(steps):
        kv_t = k[..., t, :, None] * v[..., t, None, :]
        acc = u[:, :, None] * kv_t
        for i in range(t):
            kv_i = k[..., i, :, None] * v[..., i, None, :]
            acc = acc + (w ** (t - 1 - i))[:, :, None] * kv_i
        out[..., t, :, :] = acc
    return out


def wkv_recurrent(k, v, w, u):
    """Linear-time WKV via the carried state A_{t+1} = diag(w) A_t + k_t^T v_t.

    ``k``, ``v`` are (..., h, T, d); ``w``, ``u`` are (h, d). Output is
    (..., h, T, d, d) with wkv_t = diag(u) k_t^T v_t + A_t.
    """
    k, v, w, u = as_tensor(k), as_tensor(v), as_tensor(w), as_tensor(u)
    kd, vd, wd, ud = _arrays(k, v, w, u)
    steps = kd.shape[-2]
    w3, u3 = wd[:, :, None], ud[:, :, None]
    out = np.empty(kd.shape + (kd.shape[-1],))
    state = np.zeros(kd.shape[:-2] + (kd.shape[-1], kd.shape[-1]))
    for t in range(steps):
        kv = kd[..., t, :, None] * vd[..., t, None, :]
        out[..., t, :, :] = u3 * kv + state
        state = w3 * state + kv

    lead = tuple(range(kd.ndim - 3))

    def bw(g):
        gk, gv = np.empty_like(kd), np.empty_like(vd)
        gw, gu = np.zeros_like(wd), np.zeros_like(ud)
        d_next = np.zeros_like(state)          # gradient w.r.t. A_{t+1}
        for t in reversed(range(steps)):
            kt, vt, gt = kd[..., t, :], vd[..., t, :], g[..., t, :, :]
            kv = kt[..., :, None] * vt[..., None, :]
            prev = out[..., t, :, :] - u3 * kv  # A_t
            gu += (gt * kv).sum(axis=-1).sum(axis=lead)
            gw += (d_next * prev).sum(axis=-1).sum(axis=lead)
            coeff = u3 * gt + d_next
            gk[..., t, :] = (coeff * vt[..., None, :]).sum(axis=-1)
            gv[..., t, :] = (coeff * kt[..., :, None]).sum(axis=-2)
            d_next = gt + w3 * d_next
        return gk, gv, gw, gu

    return make_node(out, (k, v, w, u), bw, "wkv")


def multihead_gate(r, wkv, w_o):
    """Gate each head's state by sigmoid(r_t), concatenate heads, project by ``w_o``.

    ``r`` is (..., h, T, d) and ``wkv`` (..., h, T, d, d); result is (..., T, C).
    """
    r, wkv = as_tensor(r), as_tensor(wkv)
    if wkv.shape[:-1] != r.shape or wkv.shape[-1] != r.shape[-1]:
        raise DimensionError(f"receptance {r.shape} incompatible with wkv {wkv.shape}")
    gate = ad.sigmoid(r).reshape(*r.shape[:-1], 1, r.shape[-1])
    heads_out = ad.matmul(gate, wkv).reshape(r.shape)
    return ad.matmul(merge_heads(heads_out), w_o)


def time_mix(x, params):
    shifted = time_shift(x)
    r, k, v = rkv_projections(x, shifted, params)
    wkv = wkv_recurrent(k, v, params.decay(), params.u)
    return multihead_gate(r, wkv, params.w_o)


def channel_mix(x, shifted, params):
    """sigmoid(r') * relu(k')^2 W_v' with k', r' from interpolated inputs."""
    x, shifted = as_tensor(x), as_tensor(shifted)
    if x.shape != shifted.shape:
        raise DimensionError(f"input {x.shape} and shifted {shifted.shape} differ")
    k = ad.matmul(ad.lerp(ad.sigmoid(params.mu_k), x, shifted), params.w_k)
    r = ad.matmul(ad.lerp(ad.sigmoid(params.mu_r), x, shifted), params.w_r)
    v = ad.matmul(ad.relu_squared(k), params.w_v)
    return ad.sigmoid(r) * v


def encode(tokens, config, params, rng=None):
    """Run every residual block over tokens (..., T, C); returns same shape.

    Each block applies pre-layer-norm time mixing then pre-layer-norm channel
    mixing, both added back onto the residual stream.
    """
    x = tokens.tokens if hasattr(tokens, "tokens") else as_tensor(tokens)
    if len(params.blocks) != config.layers:
        raise ContractError(f"{len(params.blocks)} parameter blocks for {config.layers} layers")
    if x.shape[-1] != config.embed_dim:
        raise DimensionError(f"token width {x.shape[-1]} != embed_dim {config.embed_dim}")
    rate = config.dropout if rng is not None else 0.0
    for block in params.blocks:
        h = ad.layer_norm(x, block.ln1_gain, block.ln1_bias)
        x = x + ad.dropout(time_mix(h, block.time), rate, rng)
        h = ad.layer_norm(x, block.ln2_gain, block.ln2_bias)
        x = x + ad.dropout(channel_mix(h, time_shift(h), block.channel), rate, rng)
    return x
