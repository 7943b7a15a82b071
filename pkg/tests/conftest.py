import numpy as np
import pytest

from tabulatime.autodiff import Tensor, backward


def numeric_grad(f, arr, step=1e-5):
    """Central finite differences of the scalar ``f()`` w.r.t. ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + step
        hi = f()
        arr[i] = old - step
        lo = f()
        arr[i] = old
        grad[i] = (hi - lo) / (2 * step)
    return grad


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def check_grads(loss_fn, tensors, tol=1e-4, step=1e-5):
    """Compare autodiff gradients of ``loss_fn()`` with finite differences for each tensor."""
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    for t in tensors:
        num = numeric_grad(lambda: float(loss_fn().data), t.data, step)
        err = rel_err(t.grad, num)
        assert err.max() < tol, f"max rel err {err.max():.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def param():
    def make(rng, *shape, scale=1.0):
        return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)
    return make


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
