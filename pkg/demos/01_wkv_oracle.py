"""The WKV operator two ways, and a gradient check through it.

The recurrent form carries a d x d state and costs O(T); the direct form sums
every past key-value product and costs O(T^2). They should agree to rounding.
"""
import numpy as np

from tabulatime.autodiff import Tensor, backward
from tabulatime.rwkv import wkv_direct, wkv_recurrent

rng = np.random.default_rng(0)
heads, steps, dim = 2, 48, 8
k = rng.normal(size=(heads, steps, dim))
v = rng.normal(size=(heads, steps, dim))
w = rng.uniform(0.05, 0.99, size=(heads, dim))
u = rng.normal(size=(heads, dim))

fast = wkv_recurrent(k, v, w, u).data
slow = wkv_direct(k, v, w, u)
print(f"max |recurrent - direct| over {steps} steps: {np.abs(fast - slow).max():.2e}")

# analytic gradient of a scalar summary w.r.t. the decay vs a central difference
wt = Tensor(w.copy(), requires_grad=True)
out = wkv_recurrent(k, v, wt, u)
loss = (out * out).sum()
backward(loss)
i, j, h = 1, 3, 1e-6
bumped = [w.copy(), w.copy()]
bumped[0][i, j] += h
bumped[1][i, j] -= h
numeric = ((wkv_direct(k, v, bumped[0], u) ** 2).sum() - (wkv_direct(k, v, bumped[1], u) ** 2).sum()) / (2 * h)
print(f"d loss / d w[{i},{j}]: analytic {wt.grad[i, j]:.6f}, numeric {numeric:.6f}")
