"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``backward`` orders the recorded graph topologically,
visits each node once and then drops the closures, so a fresh tape is built
by every forward pass.

Broadcasting is deliberately narrow: an operand may only be expanded along
*leading* axes (``(C,)`` or ``(1, C)`` against ``(T, C)``), which keeps the
gradient reduction a plain sum over those axes.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

__all__ = [
    "Tensor", "Tape", "tensor", "as_tensor", "no_grad", "checked", "is_grad_enabled",
    "set_checked", "matmul", "add", "sub", "mul", "div", "neg", "sigmoid", "relu",
    "relu_squared", "exp", "log", "lerp", "concat", "shift", "layer_norm",
    "cross_entropy", "mse_loss", "dropout", "elementwise", "backward", "make_node",
]

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad", True)


def _is_checked():
    return getattr(_state, "checked", False)


def set_checked(flag):
    """Turn NaN/Inf rejection at op boundaries on or off for this thread."""
    _state.checked = bool(flag)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


@contextlib.contextmanager
def checked(flag=True):
    prev = _is_checked()
    _state.checked = flag
    try:
        yield
    finally:
        _state.checked = prev


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value at boundary of op '{op}'")


class Tensor:
    """An n-d float64 array that can participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if _is_checked():
            _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{tag})"

    def __len__(self):
        return len(self.data)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return _mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return _transpose(self, tuple(axes))

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of an op over ``parents``.

    ``backward_fn(grad)`` must return one gradient (or ``None``) per parent.
    Extension point for fused ops defined outside this module.
    """
    if _is_checked():
        for p in parents:
            _check_finite(p.data, op)
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- broadcasting -------------------------------------------------------------

def _strip_leading_ones(shape):
    i = 0
    while i < len(shape) and shape[i] == 1:
        i += 1
    return shape[i:]


def _expands_to(small, big):
    core = _strip_leading_ones(small)
    return len(core) <= len(big) and tuple(big[len(big) - len(core):]) == core


def _broadcast_shape(a, b, op):
    if a == b or _expands_to(b, a):
        return a
    if _expands_to(a, b):
        return b
    raise DimensionError(f"{op}: shapes {a} and {b} differ beyond leading-axis expansion")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- binary elementwise -------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_node(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_node(out, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


# -- unary elementwise --------------------------------------------------------

def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid_np(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def relu_squared(a):
    a = as_tensor(a)
    r = np.maximum(a.data, 0.0)
    return make_node(r * r, (a,), lambda g: (2.0 * g * r,), "relu_squared")


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return make_node(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    a = as_tensor(a)
    x = a.data
    return make_node(np.log(x), (a,), lambda g: (g / x,), "log")


def lerp(mu, current, previous):
    """``mu * current + (1 - mu) * previous``."""
    current, previous = as_tensor(current), as_tensor(previous)
    # this form (not previous + mu * diff) makes both endpoints exact
    return add(mul(mu, current), mul(sub(1.0, mu), previous))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "relu": relu,
    "relu_squared": relu_squared, "exp": exp, "lerp": lerp,
}


def elementwise(op, *operands):
    """Dispatch one of the named elementwise ops by string."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_node(out, (a, b), bw, "matmul")


# -- reductions and shape ops -------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _sum(a, axis, keepdims):
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(out, (a,), bw, "sum")


def _mean(a, axis, keepdims):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return _sum(a, axes, keepdims) * (1.0 / count)


def _reshape(a, shape):
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return make_node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def _transpose(a, axes):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def _getitem(a, index):
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return make_node(a.data[index], (a,), bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {[x.shape for x in tensors]}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def shift(a, steps=1, axis=-2):
    """Delay ``a`` by ``steps`` along ``axis``; vacated leading slots are zero."""
    a = as_tensor(a)
    ax = axis % a.ndim
    n = a.shape[ax]
    out = np.zeros_like(a.data)
    if steps < n:
        dst = [slice(None)] * a.ndim
        src = [slice(None)] * a.ndim
        dst[ax], src[ax] = slice(steps, None), slice(0, n - steps)
        out[tuple(dst)] = a.data[tuple(src)]
    else:
        dst = src = None

    def bw(g):
        grad = np.zeros_like(g)
        if dst is not None:
            grad[tuple(src)] = g[tuple(dst)]
        return (grad,)

    return make_node(out, (a,), bw, "shift")


# -- fused ops ----------------------------------------------------------------

def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis, then scale by ``gain`` and add ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    c = xd.shape[-1]

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, c)
        ggain = (flat_g * xhat.reshape(-1, c)).sum(axis=0)
        gbias = flat_g.sum(axis=0)
        return gx, ggain, gbias

    return make_node(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


def _log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != logits.shape[:1]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = labels.shape[0]
    lsm = _log_softmax(logits.data)
    rows = np.arange(n)
    loss = -lsm[rows, labels].mean()

    def bw(g):
        p = np.exp(lsm)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return make_node(np.array(loss), (logits,), bw, "cross_entropy")


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def dropout(x, rate, rng):
    if rate <= 0.0 or not is_grad_enabled():
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


# -- backward pass ------------------------------------------------------------

class Tape:
    """Topologically ordered nodes feeding a loss (inputs before outputs)."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss):
        order, seen = [], set()
        stack = [(loss, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        for node in self.nodes:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
        self.nodes = []


def backward(loss):
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate graph is released.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    tape = Tape.from_loss(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    tape.clear()
