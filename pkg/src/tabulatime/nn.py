"""Parameter containers: initialisers and flat named views over nested dataclasses."""
from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor, matmul, relu


def uniform_param(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def full_param(shape, value):
    return Tensor(np.full(shape, float(value)), requires_grad=True)


def named_parameters(obj, prefix=""):
    """Flatten tensors found in nested dataclasses, lists and dicts to ``{name: Tensor}``."""
    out = {}
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(named_parameters(getattr(obj, f.name), _join(prefix, f.name)))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(named_parameters(item, _join(prefix, str(i))))
    elif isinstance(obj, dict):
        for key, item in obj.items():
            out.update(named_parameters(item, _join(prefix, key)))
    return out


def _join(prefix, name):
    return f"{prefix}.{name}" if prefix else name


def load_arrays(obj, arrays, strict=True):
    """Copy ``{name: ndarray}`` into the tensors of ``obj`` in place."""
    params = named_parameters(obj)
    if strict:
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
    for name, t in params.items():
        if name in arrays:
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


@dataclasses.dataclass
class MLP:
    """Two dense layers with a ReLU in between."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, n_in, n_hidden, n_out):
        return cls(uniform_param(rng, n_in, (n_in, n_hidden)), zeros_param((n_hidden,)),
                   uniform_param(rng, n_hidden, (n_hidden, n_out)), zeros_param((n_out,)))

    def __call__(self, x):
        return matmul(relu(matmul(x, self.w1) + self.b1), self.w2) + self.b2
